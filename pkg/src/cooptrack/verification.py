"""Pass/fail monitors that check trajectory logs against the certified inequalities.

Margins are ``allowed - observed``; a negative worst margin is a failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import tomli_w

from .certificates import ExcitationError, pe_level, per_sample_contractions
from .kinematics import cartesian_error_bound, ErrorState, leader_extent, LEADER_MARGIN
from .network import _unreachable, check_spanning_tree

PASS, FAIL, VACUOUS, SKIPPED = "pass", "fail", "vacuous", "skipped"
INEQ_REL = 1e-6
DERIV_REL = 1e-3
ENVELOPE_REL = 1e-3
PE_REL = 1e-9
# absolute floor for quantities that are pure roundoff (V0 once theta-bar has collapsed)
ROUNDOFF_FLOOR = 1e-24


@dataclass
class MonitorEntry:
    name: str
    status: str
    worst_margin: float = math.nan
    worst_time: float = math.nan
    tolerance: float = math.nan
    detail: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status == FAIL


@dataclass
class MonitorReport:
    entries: list = field(default_factory=list)

    def add(self, entry: MonitorEntry) -> None:
        if any(e.name == entry.name for e in self.entries):
            raise ValueError(f"monitor {entry.name!r} reported twice")
        self.entries.append(entry)

    def extend(self, entries) -> None:
        for e in entries:
            self.add(e)

    def __getitem__(self, name: str) -> MonitorEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def ok(self) -> bool:
        return not any(e.failed for e in self.entries)

    def to_flat(self) -> dict:
        out = {}
        for e in self.entries:
            out[f"{e.name}_status"] = e.status
            for k in ("worst_margin", "worst_time", "tolerance"):
                out[f"{e.name}_{k}"] = getattr(e, k)
            for k, v in e.detail.items():
                out[f"{e.name}_{k}"] = v
        return out

    def dumps(self) -> str:
        return flat_dumps(self.to_flat())

    def summary_table(self) -> str:
        rows = [("monitor", "status", "worst margin", "at t", "tol")]
        for e in self.entries:
            rows.append((e.name, e.status, f"{e.worst_margin:.3e}", f"{e.worst_time:.4g}", f"{e.tolerance:.1e}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def _plain(v):
    if isinstance(v, (bool, str, int)):
        return v
    if isinstance(v, (float, np.floating)):
        v = float(v)
        # TOML has inf/nan literals
        return v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    return str(v)


def flat_dumps(d: dict) -> str:
    """Flat ``key = value`` TOML with underscore keys (shared by every report)."""
    return tomli_w.dumps({k.replace(".", "_").replace("-", "_"): _plain(v) for k, v in d.items()})


def _worst(margins, times):
    i = int(np.argmin(margins))
    return float(margins[i]), float(times[i])


# ---------------------------------------------------------------- continuous law

def check_omega_monotone(log, consts) -> MonitorEntry:
    name = "omega_monotone"
    if log.law != "continuous":
        return MonitorEntry(name, SKIPPED, detail={"reason": "requires a continuous-law run"})
    L = log.lyapunov
    t, Om = log.time, L.Omega
    if len(t) < 2:
        return MonitorEntry(name, SKIPPED, detail={"reason": "fewer than two log points"})
    tol = INEQ_REL * (1.0 + Om[:-1])
    margin = Om[:-1] + tol - Om[1:]
    wm, wt = _worst(margin, t[1:])

    # finite-difference check of the strict decrease bound, trapezoid-averaged over each gap
    th2 = (log.bar_theta ** 2).sum(axis=1)
    bound = -(consts.C0_bar / 2) * (L.V1 / (1 + L.V1)) ** 2 - consts.C0 ** 2 / (2 * consts.C0_bar) * th2
    dt = np.diff(t)
    slope = np.diff(Om) / dt
    avg = 0.5 * (bound[:-1] + bound[1:])
    allowed = avg + DERIV_REL * np.abs(avg) + 1e-12 * (1.0 + Om[:-1]) / dt
    dmargin = allowed - slope
    dwm, dwt = _worst(dmargin, t[1:])
    ok = wm >= 0 and dwm >= 0
    return MonitorEntry(name, PASS if ok else FAIL, wm, wt, INEQ_REL, detail={
        "derivative_worst_margin": dwm, "derivative_worst_time": dwt,
        "derivative_tolerance": DERIV_REL, "omega_initial": float(Om[0]), "omega_final": float(Om[-1]),
    })


def _ls_slope(t, y):
    keep = np.isfinite(y) & (y > 1e-280)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def check_k_exponential(log, consts) -> MonitorEntry:
    name = "k_exponential"
    if log.law != "continuous":
        return MonitorEntry(name, SKIPPED, detail={"reason": "requires a continuous-law run"})
    r0 = log.r0
    env = consts.envelope(r0)
    t = log.time - log.time[0]
    slope = _ls_slope(t, log.lyapunov.W4) if not env.vacuous else math.nan
    detail = {"r0": r0, "C3": consts.C3, "log_M0": env.log_M0, "max_nonvacuous_r0": consts.max_nonvacuous_r0()}
    if env.vacuous:
        detail["reason"] = "envelope vacuous: exponential in the M0 gain overflows at this r0"
        return MonitorEntry(name, VACUOUS, detail=detail)
    norm = log.error_norm()
    W4 = log.lyapunov.W4
    m_norm = env.M0 * np.exp(-consts.C3 * t) - norm
    m_w4 = W4[0] * np.exp(-2 * consts.C3 * t) * (1 + ENVELOPE_REL) - W4
    wm1, wt1 = _worst(m_norm, log.time)
    wm2, wt2 = _worst(m_w4, log.time)
    detail.update(M0=env.M0, Delta0=env.Delta0, norm_worst_margin=wm1, norm_worst_time=wt1,
                  w4_worst_margin=wm2, w4_worst_time=wt2, ln_w4_slope=slope, certified_slope=-2 * consts.C3)
    ok = wm1 >= 0 and wm2 >= 0
    return MonitorEntry(name, PASS if ok else FAIL, min(wm1, wm2), wt1 if wm1 <= wm2 else wt2,
                        ENVELOPE_REL, detail)


# ---------------------------------------------------------------- sampled law

def _sample_rows(log):
    return np.flatnonzero(log.sample_instant)


def check_sampled_contraction(log, consts) -> MonitorEntry:
    name = "sampled_contraction"
    if log.law != "sampled":
        return MonitorEntry(name, SKIPPED, detail={"reason": "requires a sampled-law run"})
    T0 = log.T0
    if not T0 < consts.T1_star:
        return MonitorEntry(name, SKIPPED, detail={
            "reason": f"T0 = {T0:g} >= T1* = {consts.T1_star:.4g}; no contraction is certified",
            "T1_star": consts.T1_star})
    rho, _ = per_sample_contractions(T0, consts.h1, consts.h2, consts.C0_bar,
                                     (consts.C2, consts.C4, consts.C5, consts.L3))
    V0 = log.lyapunov.V0
    rows = _sample_rows(log)
    if len(rows) < 2:
        return MonitorEntry(name, SKIPPED, detail={"reason": "fewer than two logged sampling instants"})
    a, b = rows[:-1], rows[1:]
    gaps = np.rint((log.time[b] - log.time[a]) / T0)
    allowed = rho ** (2 * gaps) * V0[a] * (1 + INEQ_REL) + ROUNDOFF_FLOOR
    margin = allowed - V0[b]
    wm, wt = _worst(margin, log.time[b])

    # within-interval max equals the left endpoint value
    left = np.maximum.accumulate(np.where(log.sample_instant, np.arange(len(V0)), 0))
    imargin = V0[left] * (1 + INEQ_REL) + ROUNDOFF_FLOOR - V0
    iwm, iwt = _worst(imargin, log.time)
    ratios = V0[b] / np.where(V0[a] > 0, V0[a], np.nan)
    ok = wm >= 0 and iwm >= 0
    return MonitorEntry(name, PASS if ok else FAIL, wm, wt, INEQ_REL, detail={
        "varrho": rho, "varrho_sq": rho * rho, "T0": T0, "T1_star": consts.T1_star,
        "interval_max_worst_margin": iwm, "interval_max_worst_time": iwt,
        "observed_max_ratio": float(np.nanmax(ratios)) if np.any(np.isfinite(ratios)) else math.nan,
        "sampling_pairs": int(len(a)),
    })


def check_sampled_cases(log, consts) -> MonitorEntry:
    """Descriptive bookkeeping for the position part of the sampled-law argument.

    Finds the first sampling instant t_k0 after which the heading error stays
    below C0_bar/(4 C1), splits later instants by ||theta_bar(t_k)|| versus
    T0 sqrt(W1(t_k)), and, when T0 < T2*, checks the chi contraction of
    sqrt(W1) on the first kind and the L4 bound on the second.
    """
    name = "sampled_cases"
    if log.law != "sampled":
        return MonitorEntry(name, SKIPPED, detail={"reason": "requires a sampled-law run"})
    T0 = log.T0
    thr = consts.C0_bar / (4 * consts.C1)
    th = log.theta_norm()
    rows = _sample_rows(log)
    above = np.flatnonzero(th > thr)
    last_above_t = log.time[above[-1]] if len(above) else -math.inf
    later = rows[log.time[rows] > last_above_t]
    detail = {"theta_threshold": thr, "T2_star": consts.T2_star}
    if len(later) == 0:
        detail["reason"] = "heading error never settles below the threshold within the horizon"
        return MonitorEntry(name, SKIPPED, detail=detail)
    k0 = int(later[0])
    t_k0 = float(log.time[k0])
    beta = int(round((t_k0 - log.time[0]) / T0))
    W1 = np.maximum(log.lyapunov.W1, 0.0)
    case1 = th[later] <= T0 * np.sqrt(W1[later])
    detail.update(t_k0=t_k0, beta=beta, L5=consts.L5(beta, T0), case1_count=int(case1.sum()),
                  case2_count=int((~case1).sum()))
    if not T0 < consts.T2_star:
        detail["reason"] = f"T0 = {T0:g} >= T2* = {consts.T2_star:.4g}; chi is undefined"
        return MonitorEntry(name, SKIPPED, detail=detail)
    chi = consts.chi if math.isfinite(consts.chi) else math.nan
    sw = np.sqrt(W1)
    margins, times = [], []
    for j, is1 in zip(later[:-1], case1[:-1]):
        nxt = later[later > j][0]
        if is1:
            m = chi * sw[j] * (1 + INEQ_REL) - sw[nxt]
            margins.append(m)
            times.append(log.time[nxt])
        else:
            seg = slice(j, nxt + 1)
            V0k = log.lyapunov.V0[j]
            m = (consts.L4_at(T0) * math.sqrt(V0k) * (1 + INEQ_REL) - sw[seg]).min()
            margins.append(m)
            times.append(log.time[j])
    detail["chi"] = chi
    if not margins:
        return MonitorEntry(name, PASS, detail=detail)
    wm, wt = _worst(np.array(margins), np.array(times))
    return MonitorEntry(name, PASS if wm >= 0 else FAIL, wm, wt, INEQ_REL, detail)


# ---------------------------------------------------------------- assumptions, goal

@dataclass
class AssumptionAssessment:
    entries: list
    M_hat: float
    mu_hat: float
    mu_hat_history: float


def assess_assumptions(config) -> AssumptionAssessment:
    sig = config.signal
    horizon = config.horizon
    entries = []

    extent, growing = leader_extent(sig, config.leader_pose, horizon)
    M_hat = LEADER_MARGIN * extent
    ok = math.isfinite(M_hat) and M_hat > 0 and not growing
    d = {"M_hat": M_hat, "extent": extent, "still_growing": growing}
    if not ok:
        d["reason"] = "leader position unbounded or still growing at the horizon" if growing \
            else "degenerate leader extent"
    entries.append(MonitorEntry("leader_bounded", PASS if ok else FAIL,
                                float(M_hat) if ok else -math.inf, horizon, math.nan, d))

    mu = sig.pe_level
    try:
        mu_hat = pe_level(sig, horizon)
        mu_hist = pe_level(sig, horizon, include_history=True)
    except ExcitationError as exc:
        mu_hat = mu_hist = exc.mu_hat
    dom = max(sig.analytic_bound(), sig.sampled_bound(horizon))
    # relative slack absorbs quadrature roundoff when mu is declared at the exact level
    slack = PE_REL * max(mu, 1e-300)
    margin = min(mu_hat - mu + slack, mu_hist - mu + slack, sig.omega_bar - dom)
    d = {"mu_hat": mu_hat, "mu_hat_history": mu_hist, "mu_declared": mu,
         "omega_bar": sig.omega_bar, "omega_sup": dom}
    if margin < 0:
        d["reason"] = ("excitation level below the declared mu" if min(mu_hat, mu_hist) < mu
                       else "omega_bar does not dominate |omega0| and |d omega0/dt|")
    entries.append(MonitorEntry("leader_excitation", PASS if margin >= 0 else FAIL,
                                margin, math.nan, 0.0, d))

    net = config.network
    tree = check_spanning_tree(net)
    d = {} if tree else {"reason": f"followers unreachable from the leader: {_unreachable(net)}"}
    entries.append(MonitorEntry("spanning_tree", PASS if tree else FAIL,
                                1.0 if tree else -1.0, math.nan, 0.0, d))
    return AssumptionAssessment(entries, M_hat, mu_hat, mu_hist)


def check_assumptions(config) -> list:
    return assess_assumptions(config).entries


def check_tracking_goal(log, tolerance: float, after: float | None = None, name: str = "tracking") -> MonitorEntry:
    """max_i of the Cartesian formation error against ``tolerance``, at the final
    record or over every record with ``t >= after``."""
    fe = log.formation_errors().max(axis=1)
    if after is None:
        rows = np.array([len(log.time) - 1])
    else:
        rows = np.flatnonzero(log.time >= after - 1e-9)
        if len(rows) == 0:
            return MonitorEntry(name, SKIPPED, tolerance=tolerance,
                                detail={"reason": f"horizon ends before t = {after:g}"})
    wm, wt = _worst(tolerance - fe[rows], log.time[rows])

    # error coordinates bound the Cartesian error through the rotation identity
    j = len(log.time) - 1
    err = ErrorState(log.bar_theta[j], log.bar_x[j], log.bar_y[j])
    leader_xy = float(np.hypot(*log.states[j, 0, :2]))
    bound = cartesian_error_bound(err, leader_xy)
    cart = log.formation_errors()[j]
    chain = bool(np.all(cart <= bound * (1 + 1e-12) + 1e-12))
    ok = wm >= 0 and chain
    detail = {"max_error": float(fe[rows].max()), "cartesian_bound_ok": chain,
              "cartesian_bound": float(bound.max()), "final_error_state_norm": float(log.error_norm()[j])}
    if after is not None:
        detail["after"] = after
    return MonitorEntry(name, PASS if ok else FAIL, wm, wt, tolerance, detail)


# ---------------------------------------------------------------- orchestration

def verify_run(run, monitors=None) -> MonitorReport:
    """Every enabled monitor over a :class:`ScenarioRun`."""
    cfg, log, consts = run.config, run.log, run.consts
    monitors = cfg.monitors if monitors is None else monitors
    report = MonitorReport()
    if "assumptions" in monitors:
        report.extend(run.assumptions.entries)
    if "tracking" in monitors:
        report.add(check_tracking_goal(log, cfg.tracking_tolerance))
        for t_c, tol in cfg.checkpoints:
            report.add(check_tracking_goal(log, tol, after=t_c, name=f"tracking_after_{t_c:g}s"))
    table = {
        "omega_monotone": check_omega_monotone,
        "k_exponential": check_k_exponential,
        "sampled_contraction": check_sampled_contraction,
        "sampled_cases": check_sampled_cases,
    }
    for key, fn in table.items():
        if key in monitors:
            report.add(fn(log, consts))
    return report
