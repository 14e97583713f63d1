"""Lyapunov functions and the closed-form constants that certify the two laws.

Everything here is a pure function of a :class:`CouplingCertificate`, a
:class:`LeaderSignal`, the gains, and the leader bound ``M``.  Constants that
are only defined by lower bounds (gamma, sigma) are returned at the bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .controllers import ControllerGains
from .kinematics import ErrorState, LeaderSignal
from .network import CouplingCertificate

PHI_ABS_TOL = 1e-8
PHI_INTERP_TOL = 1e-7
EXP_OVERFLOW = math.log(np.finfo(float).max)
# the pair of regimes used to bound the error norm from Omega: W1 <= 7 and W1 >= 7
CASE_SPLIT = 7.0
CASE1_COEF = 1.0 / 128.0
CASE2_COEF = 0.5


class CertificateError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


class ExcitationError(ValueError):
    """The leader's angular velocity is not persistently exciting."""

    def __init__(self, msg, mu_hat):
        super().__init__(msg)
        self.mu_hat = mu_hat


# ---------------------------------------------------------------- phi(t)

def phi(t: float, signal: LeaderSignal) -> float:
    """1 + (2/T) * int_{t-T}^t int_s^t omega0^2 dtau ds.

    Evaluated as the equivalent single integral
    (2/T) * int_{t-T}^t (tau - t + T) omega0^2(tau) dtau, with omega0 frozen at
    omega0(0) before t = 0.
    """
    T = signal.pe_window
    a, b = t - T, t
    w = signal.omega0_extended

    def integrand(tau):
        return (tau - a) * float(w(tau)) ** 2

    points = [0.0] if a < 0.0 < b else None
    val, err = quad(integrand, a, b, epsabs=1e-12, epsrel=1e-12, limit=200, points=points)
    if err > PHI_ABS_TOL:
        raise QuadratureError(f"phi({t}) quadrature error {err:.2e} exceeds {PHI_ABS_TOL:g}")
    return 1.0 + 2.0 / T * val


class PhiTable:
    """phi on a uniform grid with cubic-spline interpolation.

    The grid is refined until the interpolant matches direct quadrature at
    the cell midpoints to ``tol``.
    """

    def __init__(self, signal: LeaderSignal, t_end: float, t_start: float = 0.0,
                 step: float = 0.05, tol: float = PHI_INTERP_TOL, max_refine: int = 4):
        self.signal = signal
        self.t_start, self.t_end = float(t_start), float(max(t_end, t_start + step))
        for _ in range(max_refine + 1):
            n = max(4, int(math.ceil((self.t_end - self.t_start) / step)) + 1)
            grid = np.linspace(self.t_start, self.t_end, n)
            vals = np.array([phi(t, signal) for t in grid])
            spline = CubicSpline(grid, vals)
            mids = 0.5 * (grid[:-1] + grid[1:])
            stride = max(1, len(mids) // 200)
            probe = mids[::stride]
            direct = np.array([phi(t, signal) for t in probe])
            self.max_error = float(np.abs(spline(probe) - direct).max())
            if self.max_error <= tol:
                break
            step /= 2
        else:
            raise QuadratureError(
                f"phi interpolation error {self.max_error:.2e} above {tol:g} after refinement"
            )
        self.grid, self.values, self.step, self._spline = grid, vals, step, spline

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t_start - 1e-12) or np.any(t > self.t_end + 1e-12):
            raise ValueError("phi table evaluated outside its grid")
        return self._spline(t)


# ---------------------------------------------------------------- excitation

def _cumulative_energy(signal, t0, n, step):
    grid = t0 + step * np.arange(n + 1)
    f = lambda tau: float(signal.omega0_extended(tau)) ** 2
    pieces = [quad(f, a, b, epsabs=1e-13, epsrel=1e-12)[0] for a, b in zip(grid[:-1], grid[1:])]
    return grid, np.concatenate([[0.0], np.cumsum(pieces)])


def window_energy(signal: LeaderSignal, t: float) -> float:
    """int_t^{t+T} omega0^2 (with the t < 0 history frozen at omega0(0))."""
    T = signal.pe_window
    f = lambda tau: float(signal.omega0_extended(tau)) ** 2
    points = [0.0] if t < 0.0 < t + T else None
    return quad(f, t, t + T, epsabs=1e-12, epsrel=1e-12, limit=200, points=points)[0]


def pe_level(signal: LeaderSignal, horizon: float, include_history: bool = False,
             per_window: int = 50) -> float:
    """Smallest excitation level over sliding windows starting in [0, horizon].

    ``include_history`` also scans windows starting in [-T, 0], which is what
    phi(t) sees for t < T.
    """
    T = signal.pe_window
    if T <= 0:
        raise ValueError("pe_window must be positive")
    step = T / per_window
    start = -T if include_history else 0.0
    n_starts = int(math.floor((horizon - start) / step + 1e-9)) + 1
    grid, F = _cumulative_energy(signal, start, n_starts - 1 + per_window, step)
    energy = F[per_window:per_window + n_starts] - F[:n_starts]
    i = int(np.argmin(energy))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_starts - 1)]
    mu_hat = float(energy[i])
    if hi > lo:
        res = minimize_scalar(lambda s: window_energy(signal, s), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        mu_hat = min(mu_hat, float(res.fun))
    mu_hat = min(mu_hat, window_energy(signal, grid[i]))
    if mu_hat <= 1e-14 * T:
        raise ExcitationError(f"omega0 is not persistently exciting: mu_hat = {mu_hat:.3e}", mu_hat)
    return mu_hat


# ---------------------------------------------------------------- constants

def phi_upper(signal: LeaderSignal) -> float:
    """Upper bound on phi(t): 1 + T*omega_bar*max(1, omega_bar)."""
    wb = signal.omega_bar
    return 1.0 + signal.pe_window * wb * max(1.0, wb)


def gamma(cert: CouplingCertificate, signal: LeaderSignal, gains: ControllerGains):
    """Returns ``(gamma, epsilon)``."""
    T, mu, wb = signal.pe_window, signal.pe_level, signal.omega_bar
    if mu <= 0:
        raise CertificateError("excitation level mu must be positive")
    kv = gains.k_v
    lmax = cert.lambda_max_D
    eps = (T / mu) * (wb + kv * wb * lmax)
    bracket = kv * eps * wb * cert.norm_H ** 2 / 2 + eps * wb * lmax / 2 + 2 * wb ** 2 * lmax
    g = max(2.0 / (kv * cert.lambda_min_Q) * bracket - 1.0, wb)
    return g, eps


def claim1_coefficients(cert: CouplingCertificate, signal: LeaderSignal, gains: ControllerGains,
                        M: float, gamma_value: float):
    wb = signal.omega_bar
    kw = gains.k_omega
    C1 = 2 * kw * wb * cert.norm_H
    C2 = (2 * math.sqrt(2) * kw * M * (gamma_value + phi_upper(signal) + wb)
          * math.sqrt(cert.lambda_max_D) * cert.norm_H)
    return C1, C2


def _ratio_sup(C1: float, C2: float, grid_points: int = 10_000) -> float:
    """sup_{u >= 0} (C1 u^2 + C2 u) / (1 + u^2): log grid, bounded scalar refinement,
    and the u -> inf limit C1 as a candidate."""
    if C2 == 0.0:
        return C1
    f = lambda u: (C1 * u * u + C2 * u) / (1.0 + u * u)
    # the stationary point lies in [1, 1 + 2 C1/C2]
    upper = 10.0 * (1.0 + C2 / max(C1, np.finfo(float).eps) + 2.0 * C1 / C2)
    u = np.logspace(-6, math.log10(upper), grid_points)
    vals = f(u)
    i = int(np.argmax(vals))
    best = float(vals[i])
    if 0 < i < grid_points - 1:
        # bounded golden/parabolic search; a strict bracket can fail on the flat top when C1 >> C2
        res = minimize_scalar(lambda s: -f(s), bounds=(u[i - 1], u[i + 1]), method="bounded",
                              options={"xatol": 1e-12 * u[i]})
        best = max(best, float(-res.fun))
    return max(best, C1)


def supply_coefficients(C1: float, C2: float, gamma_value: float, signal: LeaderSignal):
    """Returns ``(C0, C0_bar)``."""
    if C1 < 0 or C2 < 0 or (C1 == 0 and C2 == 0):
        raise CertificateError(f"need C1, C2 >= 0 and not both zero, got {C1}, {C2}")
    C0 = _ratio_sup(C1, C2)
    C0_bar = signal.pe_level / (signal.pe_window * (phi_upper(signal) + 2 * gamma_value))
    return C0, C0_bar


def omega_weight_sigma(C0: float, C0_bar: float, cert: CouplingCertificate,
                       gains: ControllerGains) -> float:
    return 2 * C0 ** 2 / (cert.lambda_min_Q * gains.k_omega * C0_bar)


@dataclass(frozen=True)
class SamplingBounds:
    h1: float
    h2: float
    T1_star: float
    T2_star: float
    T_star: float
    L1: float
    L2: float
    L3: float
    C4: float
    C5: float


def t2_quadratic_root(C0_bar, C2, C4, C5, L3) -> float:
    """Positive root of C4 C5 x^2 + (C2 + C4 L3) x - (3/4) C0_bar = 0."""
    b = C2 + C4 * L3
    # rationalized form; avoids cancellation when b^2 >> C4 C5 C0_bar
    return 1.5 * C0_bar / (b + math.sqrt(b * b + 3.0 * C0_bar * C4 * C5))


def sampling_bounds(cert: CouplingCertificate, signal: LeaderSignal, gains: ControllerGains,
                    M: float, gamma_value: float, C1: float, C2: float, C0_bar: float) -> SamplingBounds:
    kw, kv, wb = gains.k_omega, gains.k_v, signal.omega_bar
    lmax, lmin, nH = cert.lambda_max_D, cert.lambda_min_D, cert.norm_H
    h1 = kw * cert.lambda_min_Q / lmax
    h2 = 2 * kw ** 2 * nH * cert.norm_DH / lmin
    T1 = h1 / h2
    C4 = 2 * kv * (gamma_value + phi_upper(signal) + wb) * math.sqrt(lmax) * nH
    C5 = math.sqrt(2) * kw * M * nH
    L1 = kv * nH * math.sqrt(lmax / lmin)
    L2 = 2 * kw * M * nH * math.sqrt(lmax / lmin)
    L3 = math.sqrt(2 / lmin) * (kv * nH + kw * C0_bar / (4 * C1) * nH + wb)
    first = 3 * C0_bar / (4 * C2) if C2 > 0 else math.inf
    T2 = min(first, t2_quadratic_root(C0_bar, C2, C4, C5, L3))
    return SamplingBounds(h1, h2, T1, T2, min(T1, T2), L1, L2, L3, C4, C5)


def rho_factor(T0: float, h1: float, h2: float) -> float:
    if not 0 < T0 < h1 / h2:
        raise CertificateError(f"T0 = {T0:g} outside (0, T1*) = (0, {h1 / h2:g})")
    r = h2 * T0 / h1
    return math.exp(-h1 * T0 / 2) * (1 - r) + r


def c6_coefficient(T0, C2, C4, C5, L3) -> float:
    return C4 * C5 * T0 ** 2 + (C4 * L3 + C2) * T0


def chi_factor(T0, C0_bar, C2, C4, C5, L3) -> float:
    T2 = min(3 * C0_bar / (4 * C2) if C2 > 0 else math.inf, t2_quadratic_root(C0_bar, C2, C4, C5, L3))
    if not 0 < T0 < T2:
        raise CertificateError(f"T0 = {T0:g} outside (0, T2*) = (0, {T2:g})")
    q = 4 * c6_coefficient(T0, C2, C4, C5, L3) / (3 * C0_bar)
    return math.exp(-3 * C0_bar * T0 / 8) * (1 - q) + q


def per_sample_contractions(T0, h1, h2, C0_bar, C6_inputs):
    """``(varrho, chi)``; ``C6_inputs = (C2, C4, C5, L3)``.

    T0 outside (0, T1*) is rejected.  chi is NaN when T0 is inside (0, T1*)
    but not below T2*, where only the heading contraction is certified.
    """
    rho = rho_factor(T0, h1, h2)
    try:
        chi = chi_factor(T0, C0_bar, *C6_inputs)
    except CertificateError:
        chi = math.nan
    return rho, chi


# ---------------------------------------------------------------- envelope

@dataclass(frozen=True)
class Envelope:
    r0: float
    delta1: float
    delta2: float
    delta: float
    delta_bar: float
    Delta0: float
    M0: float
    C3: float
    log_M0: float
    vacuous: bool


def _log_expm1(x: float) -> float:
    return x + math.log1p(-math.exp(-x)) if x > 30 else math.log(math.expm1(x))


# ---------------------------------------------------------------- the set

@dataclass(frozen=True)
class CertificateSet:
    # inputs
    T: float
    mu: float
    omega_bar: float
    k_omega: float
    k_v: float
    M: float
    lambda_min_Q: float
    lambda_max_D: float
    lambda_min_D: float
    norm_H: float
    norm_DH: float
    # continuous-law constants
    epsilon: float
    gamma: float
    C1: float
    C2: float
    C0: float
    C0_bar: float
    sigma: float
    C3: float
    # sampled-law constants
    h1: float
    h2: float
    T1_star: float
    T2_star: float
    T_star: float
    L1: float
    L2: float
    L3: float
    C4: float
    C5: float
    # only when a sampling period is supplied
    T0: float = math.nan
    varrho: float = math.nan
    chi: float = math.nan
    C6: float = math.nan
    L4: float = math.nan
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def sandwich_factor(self) -> float:
        """mu/(T C0_bar): W1 <= sandwich_factor * V1."""
        return self.mu / (self.T * self.C0_bar)

    def envelope(self, r0: float) -> Envelope:
        if r0 < 0:
            raise ValueError("r0 must be nonnegative")
        lmax, lmin = self.lambda_max_D, self.lambda_min_D
        kq = self.k_omega * self.lambda_min_Q
        big = max(self.sandwich_factor, self.sigma)
        d1 = math.sqrt(lmax / lmin * r0 ** 2 + 16 * math.sqrt(lmax * big) / lmin * r0)
        x = lmax * big * r0 ** 2
        denom = lmin * min(1.0, self.sigma)
        if r0 == 0.0:
            d2 = 0.0
            vacuous = False
        elif x >= EXP_OVERFLOW:
            d2 = math.inf
            vacuous = True
        else:
            d2 = math.sqrt(2 * math.expm1(x) / denom)
            vacuous = False
        delta = max(d1, d2)
        delta_bar = self.C1 * math.sqrt(lmax / 2) * delta + self.C2
        Delta0 = 2 * self.T / (self.mu * kq) * delta_bar ** 2
        lower = min(1.0, 2 * self.T * self.C2 ** 2 / (self.mu * kq))
        M0 = math.sqrt(max(self.sandwich_factor, Delta0) * lmax / (lower * lmin)) * r0

        if r0 == 0.0:
            log_M0 = -math.inf
        else:
            # log-space copy so the size of a vacuous envelope can still be reported
            log_d2 = 0.5 * (math.log(2) + _log_expm1(x) - math.log(denom))
            log_delta = max(math.log(d1), log_d2)
            log_dbar = np.logaddexp(math.log(self.C1 * math.sqrt(lmax / 2)) + log_delta,
                                    math.log(self.C2) if self.C2 > 0 else -math.inf)
            log_D0 = math.log(2 * self.T / (self.mu * kq)) + 2 * log_dbar
            log_M0 = 0.5 * (max(math.log(self.sandwich_factor), log_D0) + math.log(lmax / (lower * lmin))) + math.log(r0)
        vacuous = vacuous or not (math.isfinite(M0) and math.isfinite(Delta0))
        return Envelope(r0, d1, d2, delta, delta_bar, Delta0, M0, self.C3, log_M0, vacuous)

    def max_nonvacuous_r0(self) -> float:
        """Largest r0 whose envelope does not overflow."""
        return math.sqrt(EXP_OVERFLOW / (self.lambda_max_D * max(self.sandwich_factor, self.sigma))) * (1 - 1e-9)

    def L5(self, beta: int, T0: float | None = None) -> float:
        T0 = self.T0 if T0 is None else T0
        return math.sqrt(self.sandwich_factor) * (1 + T0 * self.L1) ** (beta + 1)

    def L6(self, beta: int, T0: float | None = None) -> float:
        T0 = self.T0 if T0 is None else T0
        return self.L2 * self.L5(beta, T0) / self.L1 + self.L4_at(T0) + 1

    def L4_at(self, T0: float) -> float:
        return math.sqrt(self.sandwich_factor) * (
            (1 / T0 + self.L1) * math.sqrt(2 / self.lambda_min_D) + T0 * self.L2
        )

    @property
    def t0_certified(self) -> bool:
        return math.isfinite(self.T0) and 0 < self.T0 < self.T_star

    def to_flat(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "extras"}
        out.update(self.extras)
        return out


def certify(cert: CouplingCertificate, signal: LeaderSignal, gains: ControllerGains, M: float,
            T0: float | None = None) -> CertificateSet:
    if not (gains.k_omega > 0 and gains.k_v > 0):
        raise CertificateError(f"gains must be positive, got k_omega={gains.k_omega}, k_v={gains.k_v}")
    if not signal.omega_bar > 0:
        raise CertificateError("omega_bar must be positive")
    if M < 0:
        raise CertificateError("leader bound M must be nonnegative")
    g, eps = gamma(cert, signal, gains)
    C1, C2 = claim1_coefficients(cert, signal, gains, M, g)
    C0, C0_bar = supply_coefficients(C1, C2, g, signal)
    sigma = omega_weight_sigma(C0, C0_bar, cert, gains)
    C3 = min(C0_bar / 4, gains.k_omega * cert.lambda_min_Q / (4 * cert.lambda_max_D))
    sb = sampling_bounds(cert, signal, gains, M, g, C1, C2, C0_bar)
    kw = dict(
        T=signal.pe_window, mu=signal.pe_level, omega_bar=signal.omega_bar,
        k_omega=gains.k_omega, k_v=gains.k_v, M=M,
        lambda_min_Q=cert.lambda_min_Q, lambda_max_D=cert.lambda_max_D,
        lambda_min_D=cert.lambda_min_D, norm_H=cert.norm_H, norm_DH=cert.norm_DH,
        epsilon=eps, gamma=g, C1=C1, C2=C2, C0=C0, C0_bar=C0_bar, sigma=sigma, C3=C3,
        **asdict(sb),
    )
    cs = CertificateSet(**kw)
    if T0 is None:
        return cs
    upd = dict(T0=T0, C6=c6_coefficient(T0, C2, sb.C4, sb.C5, sb.L3), L4=cs.L4_at(T0))
    if T0 < sb.T1_star:
        upd["varrho"] = rho_factor(T0, sb.h1, sb.h2)
    if T0 < sb.T2_star:
        upd["chi"] = chi_factor(T0, C0_bar, C2, sb.C4, sb.C5, sb.L3)
    return replace(cs, **upd)


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True, eq=False)
class LyapunovEvaluation:
    V0: np.ndarray
    V1: np.ndarray
    phi: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    Omega: np.ndarray
    W4: np.ndarray


def lyapunov_values(t, bar_x, bar_y, bar_theta, d, phi_values, omega0_values,
                    gamma_value, sigma, Delta0=math.nan) -> LyapunovEvaluation:
    """Array form; error arrays have the follower index last."""
    bar_x, bar_y, bar_theta = (np.asarray(a, float) for a in (bar_x, bar_y, bar_theta))
    V0 = 0.5 * (bar_theta ** 2 * d).sum(axis=-1)
    V1 = 0.5 * ((bar_x ** 2 + bar_y ** 2) * d).sum(axis=-1)
    cross = (bar_x * bar_y * d).sum(axis=-1)
    W1 = (phi_values + gamma_value) * V1 - omega0_values * cross
    W2 = np.log1p(W1)
    W3 = W2 + np.expm1(-W2)
    Omega = W3 + sigma * V0
    W4 = W1 + Delta0 * V0
    return LyapunovEvaluation(V0, V1, np.asarray(phi_values, float) + 0 * V0, W1, W2, W3, Omega, W4)


def evaluate_lyapunov(t: float, err: ErrorState, cert: CouplingCertificate, signal: LeaderSignal,
                      consts: CertificateSet, r0: float | None = None,
                      phi_value: float | None = None) -> LyapunovEvaluation:
    """All Lyapunov quantities at one time.  ``r0`` selects the W4 weight; without
    it (or with a vacuous envelope) W4 is NaN."""
    Delta0 = math.nan
    if r0 is not None:
        env = consts.envelope(r0)
        if not env.vacuous:
            Delta0 = env.Delta0
    p = phi(t, signal) if phi_value is None else phi_value
    return lyapunov_values(t, err.bar_x, err.bar_y, err.bar_theta, cert.D, p,
                           signal.omega0(t), consts.gamma, consts.sigma, Delta0)


def exponential_envelope(r0: float, consts: CertificateSet):
    """Returns ``(M0, C3)``; use :meth:`CertificateSet.envelope` for the full record."""
    env = consts.envelope(r0)
    return env.M0, env.C3
