"""Fixed-step RK4 integration of the leader-follower fleet under either law.

The integrated state is the formation-shifted fleet (offsets subtracted), so
tracking the leader in these coordinates is formation keeping in the physical
ones.  Row 0 of every state array is the leader.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .certificates import CertificateSet, PhiTable, certify, lyapunov_values
from .controllers import ControllerGains, HeldErrors, SamplingSchedule, make_hold, sampled_law
from .kinematics import FleetState, LeaderSignal, apply_formation_offsets, rescale_errors, rotate_to_body
from .network import CouplingCertificate, DirectedNetwork, certify_network
from .verification import assess_assumptions

CONTINUOUS = "continuous"
SAMPLED = "sampled"
LAWS = (CONTINUOUS, SAMPLED)
DEFAULT_CONTINUOUS_STEP = 0.005
DEFAULT_CONTINUOUS_LOG = 0.05
SUBSTEPS_PER_SAMPLE = 8
GRID_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


class ScenarioValidationError(ValueError):
    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("scenario rejected: " + "; ".join(self.failures))


def grid_ratio(a: float, b: float, what: str) -> int:
    q = a / b
    n = int(round(q))
    if n < 1 or abs(q - n) > GRID_TOL * max(1.0, q):
        raise ValueError(f"{what}: {a:g} is not a positive integer multiple of {b:g}")
    return n


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    horizon: float
    log_every: float | None = None

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("integration step must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def n_steps(self) -> int:
        return grid_ratio(self.horizon, self.step, "horizon")

    def log_stride(self, default: float) -> int:
        """Integration steps between records (log interval rounded to the step grid)."""
        every = self.log_every if self.log_every is not None else default
        return max(1, int(round(every / self.step)))


@dataclass(frozen=True, eq=False)
class TrajectoryLog:
    law: str
    time: np.ndarray          # (K,)
    states: np.ndarray        # (K, N+1, 3) shifted coordinates, leader first
    offsets: np.ndarray       # (N, 2)
    omega: np.ndarray         # (K, N) follower controls applied from each record on
    v: np.ndarray
    hold_index: np.ndarray    # (K,) sampling index k, -1 for the continuous law
    sample_instant: np.ndarray  # (K,) bool
    step: float
    T0: float = math.nan
    omega0: np.ndarray | None = None
    lyapunov: object | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = self.states
        th = states[:, :, 2]
        xt, yt = rotate_to_body(states[:, :, 0], states[:, :, 1], th)
        object.__setattr__(self, "bar_theta", th[:, 1:] - th[:, :1])
        object.__setattr__(self, "bar_x", xt[:, 1:] - xt[:, :1])
        object.__setattr__(self, "bar_y", yt[:, 1:] - yt[:, :1])
        object.__setattr__(self, "tilde_leader", np.column_stack([xt[:, 0], yt[:, 0]]))

    @property
    def n_followers(self) -> int:
        return self.states.shape[1] - 1

    @property
    def physical_states(self) -> np.ndarray:
        out = self.states.copy()
        out[:, 1:, :2] += self.offsets[None]
        return out

    def error_norm(self) -> np.ndarray:
        return np.sqrt((self.bar_x ** 2 + self.bar_y ** 2 + self.bar_theta ** 2).sum(axis=1))

    def theta_norm(self) -> np.ndarray:
        return np.sqrt((self.bar_theta ** 2).sum(axis=1))

    @property
    def r0(self) -> float:
        return float(self.error_norm()[0])

    def formation_errors(self) -> np.ndarray:
        """(K, N) Euclidean norms of (x_i - x_0 - p^x_i, y_i - y_0 - p^y_i, theta_i - theta_0)."""
        diff = self.states[:, 1:, :] - self.states[:, :1, :]
        return np.sqrt((diff ** 2).sum(axis=2))

    def fleet_at(self, j: int, physical: bool = False) -> FleetState:
        s = self.physical_states[j] if physical else self.states[j]
        return FleetState(s[0], s[1:], float(self.time[j]))

    def csv_columns(self) -> list[str]:
        n = self.n_followers
        cols = ["time"]
        for i in range(n + 1):
            cols += [f"x_{i}", f"y_{i}", f"theta_{i}"]
        for name in ("bar_x", "bar_y", "bar_theta", "omega", "v"):
            cols += [f"{name}_{i}" for i in range(1, n + 1)]
        return cols + ["V0", "V1", "W1", "Omega", "W4"]

    def csv_matrix(self) -> np.ndarray:
        k = len(self.time)
        phys = self.physical_states.reshape(k, -1)
        if self.lyapunov is None:
            lyap = np.full((k, 5), np.nan)
        else:
            L = self.lyapunov
            lyap = np.column_stack([L.V0, L.V1, L.W1, L.Omega, L.W4])
        return np.column_stack([self.time, phys, self.bar_x, self.bar_y, self.bar_theta,
                                self.omega, self.v, lyap])

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            np.savetxt(fh, self.csv_matrix(), delimiter=",", fmt="%.17g",
                       header=",".join(self.csv_columns()), comments="")
        return path


def refresh_hold(fleet: FleetState, net: DirectedNetwork, schedule: SamplingSchedule) -> HeldErrors:
    if not schedule.is_instant(fleet.time):
        raise ValueError(f"hold refreshed off the sampling grid at t = {fleet.time:g}")
    return make_hold(fleet, net, schedule.index(fleet.time))


def _make_rhs(H, signal, gains):
    kw, kv = gains.k_omega, gains.k_v
    n1 = H.shape[0] + 1
    om0, v0f = signal.omega0, signal.v0

    def rhs(t, s, held):
        th = s[:, 2]
        c, sn = np.cos(th), np.sin(th)
        w0 = float(om0(t))
        v0 = float(v0f(t))
        if held is None:
            xt = c * s[:, 0] + sn * s[:, 1]
            e_th = H @ (th[1:] - th[0])
            e_x = H @ (xt[1:] - xt[0])
        else:
            e_th, e_x = held
        out = np.empty((n1, 3))
        v = out[:, 0]
        v[0] = v0
        v[1:] = v0 - kv * e_x
        out[:, 1] = v * sn
        v *= c
        out[0, 2] = w0
        out[1:, 2] = w0 - kw * e_th
        return out

    return rhs


def step_closed_loop(fleet: FleetState, net: DirectedNetwork, signal: LeaderSignal,
                     gains: ControllerGains, h: float, held: HeldErrors | None = None) -> FleetState:
    """One RK4 step.  ``held=None`` is the continuous law; otherwise the held
    feedback is frozen over the step while the feedforward follows omega0(t), v0(t)."""
    rhs = _make_rhs(net.laplacian, signal, gains)
    hv = None if held is None else (held.e_theta_held, held.e_xtilde_held)
    s = _rk4(rhs, fleet.time, fleet.stacked(), h, hv)
    t = fleet.time + h
    if not np.all(np.isfinite(s)):
        raise SimulationError(f"non-finite state at t = {t:g}")
    return FleetState(s[0], s[1:], t)


def _rk4(rhs, t, s, h, held):
    k1 = rhs(t, s, held)
    k2 = rhs(t + 0.5 * h, s + 0.5 * h * k1, held)
    k3 = rhs(t + 0.5 * h, s + 0.5 * h * k2, held)
    k4 = rhs(t + h, s + h * k3, held)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(net: DirectedNetwork, signal: LeaderSignal, gains: ControllerGains, fleet0: FleetState,
             law: str, integ: IntegratorConfig, T0: float | None = None, offsets=None) -> TrajectoryLog:
    """Integrate the closed loop from ``fleet0`` (shifted coordinates).

    No assumption checks happen here; callers wanting certified runs go
    through :func:`run_scenario`.
    """
    if law not in LAWS:
        raise ValueError(f"law must be one of {LAWS}, got {law!r}")
    H = net.laplacian
    n = net.follower_count
    if fleet0.n_followers != n:
        raise ValueError(f"fleet has {fleet0.n_followers} followers, network has {n}")
    offsets = np.zeros((n, 2)) if offsets is None else np.asarray(offsets, float)
    h = integ.step
    n_steps = integ.n_steps
    t0 = fleet0.time
    rhs = _make_rhs(H, signal, gains)
    kw, kv = gains.k_omega, gains.k_v

    if law == SAMPLED:
        if T0 is None:
            raise ValueError("sampled law needs a sampling period T0")
        schedule = SamplingSchedule(T0, t0)
        sub = grid_ratio(T0, h, "sampling period")
        stride = integ.log_stride(T0)
    else:
        schedule, sub = None, 0
        stride = integ.log_stride(DEFAULT_CONTINUOUS_LOG)

    times, states, omegas, vs, holds, instants = [], [], [], [], [], []
    s = fleet0.stacked()
    held = None
    hold_obj = None

    def record(j, t, s):
        w0 = float(signal.omega0(t))
        v0 = float(signal.v0(t))
        if hold_obj is None:
            xt = np.cos(s[:, 2]) * s[:, 0] + np.sin(s[:, 2]) * s[:, 1]
            om = w0 - kw * (H @ (s[1:, 2] - s[0, 2]))
            vv = v0 - kv * (H @ (xt[1:] - xt[0]))
            holds.append(-1)
            instants.append(False)
        else:
            om, vv = sampled_law(hold_obj, w0, v0, gains, t, T0)
            holds.append(hold_obj.index)
            instants.append(j % sub == 0)
        times.append(t)
        states.append(s.copy())
        omegas.append(om)
        vs.append(vv)

    for j in range(n_steps + 1):
        t = t0 + j * h
        if law == SAMPLED and j % sub == 0:
            fleet = FleetState(s[0], s[1:], t)
            hold_obj = refresh_hold(fleet, net, schedule)
            held = (hold_obj.e_theta_held, hold_obj.e_xtilde_held)
        if j % stride == 0 or j == n_steps:
            record(j, t, s)
        if j == n_steps:
            break
        s = _rk4(rhs, t, s, h, held)
        if not math.isfinite(s.sum()):
            raise SimulationError(f"non-finite state at t = {t + h:g}")

    time = np.array(times)
    return TrajectoryLog(
        law=law, time=time, states=np.array(states), offsets=offsets,
        omega=np.array(omegas), v=np.array(vs), hold_index=np.array(holds),
        sample_instant=np.array(instants), step=h,
        T0=float(T0) if law == SAMPLED else math.nan,
        omega0=np.asarray(signal.omega0(time), float),
    )


@functools.lru_cache(maxsize=16)
def phi_table(signal: LeaderSignal, t_start: float, t_end: float) -> PhiTable:
    return PhiTable(signal, t_end=t_end, t_start=t_start)


def attach_lyapunov(log: TrajectoryLog, consts: CertificateSet, coupling: CouplingCertificate,
                    signal: LeaderSignal) -> TrajectoryLog:
    """Evaluate every Lyapunov quantity at the log points (W4 uses this run's r0)."""
    table = phi_table(signal, float(log.time[0]), float(log.time[-1]))
    env = consts.envelope(log.r0)
    Delta0 = math.nan if env.vacuous else env.Delta0
    lyap = lyapunov_values(log.time, log.bar_x, log.bar_y, log.bar_theta, coupling.D,
                           table(log.time), log.omega0, consts.gamma, consts.sigma, Delta0)
    meta = dict(log.meta, envelope=env, phi_interp_error=table.max_error)
    return replace(log, lyapunov=lyap, meta=meta)


@dataclass(frozen=True, eq=False)
class ScenarioRun:
    config: object
    coupling: CouplingCertificate
    consts: CertificateSet
    log: TrajectoryLog
    assumptions: object


def initial_fleet(config) -> FleetState:
    fleet = FleetState.from_poses(config.leader_pose, config.follower_poses)
    fleet = apply_formation_offsets(fleet, config.offsets)
    if config.rescale_error_norm is not None:
        fleet = rescale_errors(fleet, config.rescale_error_norm)
    return fleet


def certify_scenario(config, assessment=None):
    """Assumption checks plus the certificate set.  Returns ``(coupling, consts, assessment)``."""
    assessment = assessment or assess_assumptions(config)
    failures = [f"{e.name}: {e.detail.get('reason', 'failed')}" for e in assessment.entries
                if e.status == "fail"]
    if not config.gains.positive:
        failures.append(f"controller gains must be positive (k_omega={config.gains.k_omega}, "
                        f"k_v={config.gains.k_v})")
    if failures:
        raise ScenarioValidationError(failures)
    coupling = certify_network(config.network)
    M = config.leader_bound if config.leader_bound is not None else assessment.M_hat
    consts = certify(coupling, config.signal, config.gains, M, config.T0)
    return coupling, consts, assessment


def run_scenario(config, law: str | None = None) -> ScenarioRun:
    law = law or config.law
    coupling, consts, assessment = certify_scenario(config)
    integ = config.integrator(law)
    log = simulate(config.network, config.signal, config.gains, initial_fleet(config), law, integ,
                   T0=config.T0, offsets=np.asarray(config.offsets, float))
    log = attach_lyapunov(log, consts, coupling, config.signal)
    return ScenarioRun(config, coupling, consts, log, assessment)
