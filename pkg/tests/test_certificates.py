import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cooptrack.certificates import (
    CertificateError,
    ExcitationError,
    PhiTable,
    certify,
    chi_factor,
    claim1_coefficients,
    evaluate_lyapunov,
    exponential_envelope,
    gamma,
    lyapunov_values,
    omega_weight_sigma,
    pe_level,
    per_sample_contractions,
    phi,
    rho_factor,
    supply_coefficients,
    t2_quadratic_root,
)
from cooptrack.controllers import ControllerGains
from cooptrack.kinematics import ErrorState, LeaderSignal
from cooptrack.network import DirectedNetwork, certify_network, find_diagonal_scaling

import oracles
from conftest import STANDIN_EDGES

REF_SIG = LeaderSignal("inverse-sqrt", (0.8, 400, 800), (4, 100, 200), 0.8, 1.0, 0.58)
GAINS = ControllerGains(k_omega=0.5, k_v=1.0)
M_REF = 1.05 * 6.25


def const(c, T=1.0, mu=1.0, wb=0.8):
    return LeaderSignal("constant", (c,), (0.0,), wb, T, mu)


@pytest.fixture(scope="module")
def standin():
    return certify_network(DirectedNetwork.from_edges(4, STANDIN_EDGES))


@pytest.fixture(scope="module")
def ref_consts(standin):
    return certify(standin, REF_SIG, GAINS, M_REF, T0=0.04)


# ---------------------------------------------------------------- phi

def test_phi_constant_signals():
    assert phi(3.0, const(0.0, wb=0.0)) == pytest.approx(1.0, abs=1e-14)
    for c, T in ((0.8, 1.0), (0.3, 2.5), (1.0, 0.5)):
        sig = const(c, T=T)
        for t in (0.0, 0.7, 12.0):
            assert abs(phi(t, sig) - (1 + c * c * T)) <= 1e-8


def test_phi_ref_signal_against_riemann_and_nested():
    val = phi(10.0, REF_SIG)
    assert 1.0 <= val <= 1.8
    assert abs(val - oracles.phi_riemann(10.0, REF_SIG.omega0, 1.0)) <= 1e-6
    assert abs(val - oracles.phi_nested(10.0, REF_SIG.omega0, 1.0)) <= 1e-8
    # the window reaching into t < 0 uses the frozen history
    assert abs(phi(0.3, REF_SIG) - oracles.phi_nested(0.3, REF_SIG.omega0, 1.0)) <= 1e-8


def test_phi_table_interpolation():
    table = PhiTable(REF_SIG, 20.0)
    assert table.max_error <= 1e-7
    t = np.linspace(0.0, 20.0, 37)
    direct = np.array([phi(s, REF_SIG) for s in t])
    assert np.abs(table(t) - direct).max() <= 1e-7
    with pytest.raises(ValueError):
        table(21.0)


# ---------------------------------------------------------------- gamma, C1, C2

def test_gamma_examples():
    unit = find_diagonal_scaling([[1.0]])
    g, eps = gamma(unit, const(1.0, wb=1.0), ControllerGains(1.0, 1.0))
    assert eps == pytest.approx(2.0) and g == pytest.approx(3.0)
    g0, _ = gamma(unit, const(0.0, wb=0.0), ControllerGains(1.0, 1.0))
    assert g0 == 0.0


def test_claim1_examples():
    unit = find_diagonal_scaling([[1.0]])  # D = [1], ||H|| = 1
    C1, C2 = claim1_coefficients(unit, const(0.8, wb=0.8), ControllerGains(0.0, 1.0), 1.0, 3.0)
    assert C1 == 0.0 and C2 == 0.0
    C1, _ = claim1_coefficients(unit, const(0.8, wb=0.8), ControllerGains(0.5, 1.0), 1.0, 3.0)
    assert C1 == pytest.approx(0.8)
    _, C2 = claim1_coefficients(unit, const(1.0, wb=1.0), ControllerGains(1.0, 1.0), 1.0, 3.0)
    assert C2 == pytest.approx(12 * math.sqrt(2))


# ---------------------------------------------------------------- C0, C0_bar, sigma

def test_supply_examples():
    sig = const(1.0)
    assert supply_coefficients(1.0, 0.0, 1.0, sig)[0] == 1.0
    assert supply_coefficients(0.0, 1.0, 1.0, sig)[0] == pytest.approx(0.5, rel=1e-12)
    C0 = supply_coefficients(1.0, 1.0, 1.0, sig)[0]
    assert abs(C0 - oracles.ratio_sup_brute(1.0, 1.0)) <= 1e-8
    assert C0 == pytest.approx((1 + math.sqrt(2)) / 2, rel=1e-12)


@given(st.floats(0.0, 1e4), st.floats(1e-4, 1e4))
def test_supply_matches_closed_form(C1, C2):
    C0, _ = supply_coefficients(C1, C2, 1.0, const(1.0))
    assert C0 == pytest.approx(oracles.ratio_sup_closed(C1, C2), rel=1e-10)


def test_supply_large_C1_small_C2():
    # maximizer near u = 2 C1 / C2, far outside a range scaled by C2/C1 alone
    C0, _ = supply_coefficients(1e4, 1.0, 1.0, const(1.0))
    assert C0 == pytest.approx(oracles.ratio_sup_closed(1e4, 1.0), rel=1e-12)
    assert C0 > 1e4


def test_supply_rejects_degenerate():
    with pytest.raises(CertificateError):
        supply_coefficients(0.0, 0.0, 1.0, const(1.0))


def test_sigma_examples():
    cert = find_diagonal_scaling([[1.0]])  # lambda_min(Q) = 2
    assert omega_weight_sigma(1.0, 1.0, cert, ControllerGains(1.0, 1.0)) == pytest.approx(1.0)
    a = omega_weight_sigma(0.7, 0.3, cert, GAINS)
    assert omega_weight_sigma(1.4, 0.3, cert, GAINS) == pytest.approx(4 * a)


# ---------------------------------------------------------------- full set vs oracle

def _oracle_for(cert, sig, gains, M):
    return oracles.constants(cert.lambda_min_Q, cert.lambda_max_D, cert.lambda_min_D, cert.norm_H,
                             cert.norm_DH, sig.pe_window, sig.pe_level, sig.omega_bar,
                             gains.k_omega, gains.k_v, M)


def test_reference_setup_constants_match_independent_transcription(standin, ref_consts):
    ref = _oracle_for(standin, REF_SIG, GAINS, M_REF)
    for key in ("epsilon", "gamma", "C1", "C2", "C0", "C0_bar", "sigma", "C3", "h1", "h2",
                "T1_star", "C4", "C5", "L1", "L2", "L3", "T2_star", "T_star"):
        assert getattr(ref_consts, key) == pytest.approx(ref[key], rel=1e-10), key
    # frozen from the oracle for the stand-in graph
    assert ref_consts.gamma == pytest.approx(68.1832, rel=1e-5)
    assert ref_consts.T_star == pytest.approx(4.29704e-7, rel=1e-5)


def test_structural_inequalities(standin, ref_consts):
    c = ref_consts
    assert c.gamma >= c.omega_bar
    brk = (c.k_v * c.epsilon * c.omega_bar * c.norm_H ** 2 / 2 + c.epsilon * c.omega_bar * c.lambda_max_D / 2
           + 2 * c.omega_bar ** 2 * c.lambda_max_D)
    assert c.gamma >= 2 / (c.k_v * c.lambda_min_Q) * brk - 1
    assert 0 < c.T_star == min(c.T1_star, c.T2_star)
    assert c.T_star <= 1e-4 and c.T_star < 0.04
    assert not c.t0_certified


def test_certify_rejects_nonpositive_gains(standin):
    with pytest.raises(CertificateError, match="positive"):
        certify(standin, REF_SIG, ControllerGains(0.0, 1.0), M_REF)


# ---------------------------------------------------------------- sampling constants

def test_t2_root_residual(ref_consts):
    c = ref_consts
    x = t2_quadratic_root(c.C0_bar, c.C2, c.C4, c.C5, c.L3)
    res = c.C4 * c.C5 * x * x + (c.C2 + c.C4 * c.L3) * x - 0.75 * c.C0_bar
    assert abs(res) <= 1e-10
    ref = _oracle_for(certify_network(DirectedNetwork.from_edges(4, STANDIN_EDGES)), REF_SIG, GAINS, M_REF)
    assert x == pytest.approx(ref["T2_root"], rel=1e-6)


def test_rho_examples():
    assert rho_factor(0.5, 1.0, 1.0) == pytest.approx(0.5 * math.exp(-0.25) + 0.5, rel=1e-12)
    assert rho_factor(0.5, 1.0, 1.0) == pytest.approx(0.8894, abs=1e-4)
    assert 1 - rho_factor(1e-9, 1.0, 1.0) < 1e-8
    h1, h2 = 0.7, 2.3
    grid = np.linspace(0, h1 / h2, 1002)[1:-1]
    vals = np.array([rho_factor(T0, h1, h2) for T0 in grid])
    assert np.all((vals > 0) & (vals < 1))
    assert rho_factor(0.3, h1, h2) == pytest.approx(oracles.rho(0.3, h1, h2), rel=1e-14)
    with pytest.raises(CertificateError):
        rho_factor(h1 / h2, h1, h2)


def test_chi_in_unit_interval(ref_consts):
    c = ref_consts
    for frac in (1e-3, 0.3, 0.9):
        T0 = frac * c.T2_star
        rho, chi = per_sample_contractions(T0, c.h1, c.h2, c.C0_bar,
                                           (c.C2, c.C4, c.C5, c.L3))
        assert 0 < rho < 1 and 0 < chi < 1
    with pytest.raises(CertificateError):
        chi_factor(0.04, c.C0_bar, c.C2, c.C4, c.C5, c.L3)


# ---------------------------------------------------------------- Lyapunov values

def test_lyapunov_zero_and_V0():
    cert = find_diagonal_scaling([[1.0, 0.0], [-1.0, 1.0]])
    sig = const(0.8, mu=0.6)
    consts = certify(cert, sig, GAINS, 1.0)
    z = np.zeros(2)
    ev = evaluate_lyapunov(1.0, ErrorState(z, z, z), cert, sig, consts, r0=0.0)
    for name in ("V0", "V1", "W1", "W2", "W3", "Omega", "W4"):
        assert float(getattr(ev, name)) == 0.0
    ev = evaluate_lyapunov(1.0, ErrorState(np.array([1.0, 0.0]), z, z), cert, sig, consts)
    assert float(ev.V0) == pytest.approx(1.0)


def test_sandwich_on_random_states(ref_consts, standin):
    rng = np.random.default_rng(2024)
    n = 10_000
    bx, by, bt = rng.normal(size=(3, n, 4)) * rng.lognormal(0, 2, size=(1, n, 1))
    t = rng.uniform(0, 100, n)
    phis = PhiTable(REF_SIG, 100.0)(t)
    ev = lyapunov_values(t, bx, by, bt, standin.D, phis, REF_SIG.omega0(t), ref_consts.gamma,
                         ref_consts.sigma)
    c = ref_consts
    upper = (1 + c.T * c.omega_bar + 2 * c.gamma) * ev.V1
    assert np.all(ev.V1 <= ev.W1 * (1 + 1e-9))
    assert np.all(ev.W1 <= upper * (1 + 1e-9))
    assert np.all(ev.W3 >= 0)


# ---------------------------------------------------------------- envelope

def test_envelope_class_K(ref_consts):
    assert exponential_envelope(0.0, ref_consts)[0] == 0.0
    r = np.linspace(0, ref_consts.max_nonvacuous_r0(), 100)
    m0 = [ref_consts.envelope(x).M0 for x in r]
    assert np.all(np.diff(m0) >= 0)


def test_envelope_vacuous_reported(ref_consts):
    env = ref_consts.envelope(0.1)
    assert env.vacuous and math.isinf(env.delta2)
    assert env.log_M0 > 1e6  # finite log even though M0 overflows


def test_envelope_matches_oracle_single_follower():
    cert = find_diagonal_scaling([[1.0]])
    sig = const(0.8, mu=0.63)
    c = certify(cert, sig, GAINS, 0.105)
    env = c.envelope(0.1)
    ref = oracles.envelope(0.1, cert.lambda_min_Q, cert.lambda_max_D, cert.lambda_min_D, 1.0, 0.63, 0.5,
                           c.C1, c.C2, c.C0_bar, c.sigma)
    assert not env.vacuous
    for key in ("delta1", "delta2", "Delta0", "M0"):
        assert getattr(env, key) == pytest.approx(ref[key], rel=1e-10), key
    assert env.log_M0 == pytest.approx(math.log(env.M0), rel=1e-12)
    assert c.C3 == pytest.approx(min(c.C0_bar / 4, 0.5 * 2 / 4))


# ---------------------------------------------------------------- excitation

def test_pe_zero_rejected():
    with pytest.raises(ExcitationError) as exc:
        pe_level(const(0.0, wb=0.0), 10.0)
    assert exc.value.mu_hat == 0.0


def test_pe_constant():
    assert pe_level(const(0.8), 10.0) == pytest.approx(0.64, rel=1e-12)
    assert pe_level(const(0.5, T=2.0), 10.0) == pytest.approx(0.5, rel=1e-12)


def test_pe_ref_signal_against_closed_form():
    mu_hat = pe_level(REF_SIG, 100.0)
    # the window energy increases with t, so the minimum is the first window
    ref = oracles.inverse_sqrt_energy(0.8, 400.0, 800.0, 0.0, 1.0)
    assert mu_hat == pytest.approx(ref, abs=1e-9)
    assert mu_hat == pytest.approx(0.590160, abs=1e-6)
    hist = pe_level(REF_SIG, 100.0, include_history=True)
    assert hist == pytest.approx((0.8 - 1 / math.sqrt(800)) ** 2, abs=1e-9)
