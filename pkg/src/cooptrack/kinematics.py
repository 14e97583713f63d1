"""Unicycle kinematics, leader reference signals and error coordinates.

Headings are kept unwrapped throughout: theta lives on the real line, never
reduced modulo 2*pi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import solve_ivp

LEADER_MARGIN = 1.05

SIGNAL_PARAMS = {
    "constant": ("value",),
    "inverse-sqrt": ("offset", "rate", "shift"),
    "sinusoid": ("offset", "amplitude", "frequency", "phase"),
}


class LeaderBoundWarning(UserWarning):
    pass


class Pose(NamedTuple):
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class LeaderSignal:
    """Leader angular/linear velocity profiles plus the declared bounds.

    Families (``omega`` and ``v`` use the same family):

    * ``constant``: ``value``
    * ``inverse-sqrt``: ``omega0 = offset - 1/sqrt(rate*t + shift)`` and
      ``v0 = offset + 1/sqrt(rate*t + shift)``
    * ``sinusoid``: ``offset + amplitude*sin(frequency*t + phase)``

    ``omega_bar`` must dominate |omega0| and |d omega0/dt|; ``pe_window`` and
    ``pe_level`` are the excitation window T and level mu.
    """

    kind: str
    omega: tuple
    v: tuple
    omega_bar: float
    pe_window: float = 1.0
    pe_level: float = 0.0

    def __post_init__(self):
        if self.kind not in SIGNAL_PARAMS:
            raise ValueError(f"unknown leader signal kind {self.kind!r}")
        n = len(SIGNAL_PARAMS[self.kind])
        for name in ("omega", "v"):
            params = tuple(float(p) for p in getattr(self, name))
            if len(params) != n:
                raise ValueError(f"{self.kind} {name} needs {n} parameters, got {len(params)}")
            object.__setattr__(self, name, params)
        if self.kind == "inverse-sqrt":
            for name in ("omega", "v"):
                _, rate, shift = getattr(self, name)
                if rate < 0 or shift <= 0:
                    raise ValueError(f"inverse-sqrt {name} needs rate >= 0 and shift > 0")
        if self.pe_window <= 0:
            raise ValueError("pe_window must be positive")

    @classmethod
    def from_params(cls, kind, omega: dict, v: dict, **kw) -> "LeaderSignal":
        names = SIGNAL_PARAMS[kind]
        for label, params in (("omega", omega), ("v", v)):
            extra = set(params) - set(names)
            if extra:
                raise ValueError(f"unknown {kind} {label} parameters {sorted(extra)}")
        defaults = {"phase": 0.0}
        om = tuple(omega.get(k, defaults.get(k)) for k in names)
        vv = tuple(v.get(k, defaults.get(k)) for k in names)
        for label, params in (("omega", om), ("v", vv)):
            if any(p is None for p in params):
                raise ValueError(f"{kind} {label} needs parameters {list(names)}")
        return cls(kind, om, vv, **kw)

    def params_dict(self, which: str) -> dict:
        return dict(zip(SIGNAL_PARAMS[self.kind], getattr(self, which)))

    def _eval(self, params, t, sign):
        t = np.asarray(t, dtype=float) if not np.isscalar(t) else t
        if self.kind == "constant":
            return params[0] + 0.0 * t
        if self.kind == "inverse-sqrt":
            a, b, c = params
            return a + sign / np.sqrt(b * t + c)
        off, amp, freq, phase = params
        return off + amp * np.sin(freq * t + phase)

    def omega0(self, t):
        return self._eval(self.omega, t, -1.0)

    def v0(self, t):
        return self._eval(self.v, t, +1.0)

    def omega0_dot(self, t):
        t = np.asarray(t, dtype=float) if not np.isscalar(t) else t
        if self.kind == "constant":
            return 0.0 * t
        if self.kind == "inverse-sqrt":
            _, b, c = self.omega
            return 0.5 * b * (b * t + c) ** -1.5
        _, amp, freq, phase = self.omega
        return amp * freq * np.cos(freq * t + phase)

    def omega0_extended(self, t):
        """omega0 with the t < 0 history frozen at omega0(0)."""
        return self.omega0(np.maximum(t, 0.0))

    def analytic_bound(self) -> float:
        """sup over t >= 0 of max(|omega0|, |omega0_dot|) from the family's shape."""
        if self.kind == "constant":
            return abs(self.omega[0])
        if self.kind == "inverse-sqrt":
            a, b, c = self.omega
            # monotone on t >= 0: extremes at t = 0 and t -> inf; derivative peaks at t = 0
            return max(abs(a - 1.0 / math.sqrt(c)), abs(a), 0.5 * b * c ** -1.5)
        off, amp, freq, _ = self.omega
        return max(abs(off) + abs(amp), abs(amp * freq))

    def sampled_bound(self, horizon: float, points: int = 100_001) -> float:
        t = np.linspace(0.0, horizon, points)
        return float(max(np.abs(self.omega0(t)).max(), np.abs(self.omega0_dot(t)).max()))


@dataclass(frozen=True, eq=False)
class FleetState:
    """Leader pose (3,) and follower poses (N, 3) as ``[x, y, theta]`` rows."""

    leader: np.ndarray
    followers: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        leader = np.array(self.leader, dtype=float).reshape(3)
        followers = np.array(self.followers, dtype=float)
        if followers.ndim != 2 or followers.shape[1] != 3:
            raise ValueError(f"followers must have shape (N, 3), got {followers.shape}")
        if not (np.all(np.isfinite(leader)) and np.all(np.isfinite(followers))):
            raise ValueError("poses must be finite")
        object.__setattr__(self, "leader", leader)
        object.__setattr__(self, "followers", followers)

    @classmethod
    def from_poses(cls, leader: Sequence[float], followers: Sequence[Sequence[float]], time=0.0):
        return cls(np.asarray(leader, float), np.asarray(followers, float), time)

    @property
    def n_followers(self) -> int:
        return self.followers.shape[0]

    def stacked(self) -> np.ndarray:
        """All poses as an (N+1, 3) array with the leader in row 0."""
        return np.vstack([self.leader, self.followers])


@dataclass(frozen=True, eq=False)
class ErrorState:
    bar_theta: np.ndarray
    bar_x: np.ndarray
    bar_y: np.ndarray
    tilde_leader: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.bar_x, self.bar_y, self.bar_theta])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))


def rotate_to_body(x, y, theta):
    c, s = np.cos(theta), np.sin(theta)
    return c * x + s * y, -s * x + c * y


def rotate_from_body(x_tilde, y_tilde, theta):
    c, s = np.cos(theta), np.sin(theta)
    return c * x_tilde - s * y_tilde, s * x_tilde + c * y_tilde


def error_state(fleet: FleetState) -> ErrorState:
    lx, ly, lth = fleet.leader
    f = fleet.followers
    xt0, yt0 = rotate_to_body(lx, ly, lth)
    xt, yt = rotate_to_body(f[:, 0], f[:, 1], f[:, 2])
    return ErrorState(
        bar_theta=f[:, 2] - lth,
        bar_x=xt - xt0,
        bar_y=yt - yt0,
        tilde_leader=np.array([xt0, yt0]),
    )


def fleet_from_errors(leader, bar_x, bar_y, bar_theta, time=0.0) -> FleetState:
    """Inverse of :func:`error_state` for a given leader pose."""
    leader = np.asarray(leader, dtype=float)
    xt0, yt0 = rotate_to_body(leader[0], leader[1], leader[2])
    theta = leader[2] + np.asarray(bar_theta, float)
    x, y = rotate_from_body(xt0 + np.asarray(bar_x, float), yt0 + np.asarray(bar_y, float), theta)
    return FleetState(leader, np.column_stack([x, y, theta]), time)


def rescale_errors(fleet: FleetState, r0: float) -> FleetState:
    """Same leader and error direction, error-state norm set to ``r0``."""
    err = error_state(fleet)
    norm = err.norm()
    if norm == 0.0:
        raise ValueError("cannot rescale a zero error state")
    k = r0 / norm
    return fleet_from_errors(fleet.leader, k * err.bar_x, k * err.bar_y, k * err.bar_theta, fleet.time)


def _check_offsets(fleet, offsets):
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape != (fleet.n_followers, 2):
        raise ValueError(
            f"need {fleet.n_followers} formation offsets of shape (N, 2), got {offsets.shape}"
        )
    return offsets


def apply_formation_offsets(fleet: FleetState, offsets) -> FleetState:
    offsets = _check_offsets(fleet, offsets)
    f = fleet.followers.copy()
    f[:, :2] -= offsets
    return FleetState(fleet.leader, f, fleet.time)


def remove_formation_offsets(fleet: FleetState, offsets) -> FleetState:
    offsets = _check_offsets(fleet, offsets)
    f = fleet.followers.copy()
    f[:, :2] += offsets
    return FleetState(fleet.leader, f, fleet.time)


def cartesian_error(fleet: FleetState) -> np.ndarray:
    return fleet.followers - fleet.leader[None, :]


def cartesian_error_bound(err: ErrorState, leader_xy_norm: float) -> np.ndarray:
    """Per-follower upper bound on ||(x_i - x_0, y_i - y_0, theta_i - theta_0)||.

    From p_i - p_0 = R(theta_i)^T [bar_x_i, bar_y_i] - R(theta_i)^T (R(theta_i) - R(theta_0)) p_0
    and ||R(a) - R(b)|| = 2|sin((a - b)/2)|.
    """
    planar = np.hypot(err.bar_x, err.bar_y)
    rot = 2.0 * np.abs(np.sin(0.5 * err.bar_theta)) * leader_xy_norm
    return planar + rot + np.abs(err.bar_theta)


def _leader_rhs(signal):
    def rhs(t, s):
        v = signal.v0(t)
        return [v * math.cos(s[2]), v * math.sin(s[2]), signal.omega0(t)]

    return rhs


def leader_trajectory(signal: LeaderSignal, leader_init, horizon: float, dt: float = 0.01):
    """Leader poses on a uniform grid, integrated independently of the fleet simulator."""
    n = int(round(horizon / dt)) + 1
    t = np.linspace(0.0, horizon, n)
    sol = solve_ivp(
        _leader_rhs(signal), (0.0, horizon), np.asarray(leader_init, float),
        method="DOP853", t_eval=t, rtol=1e-10, atol=1e-10,
    )
    if not sol.success:
        raise RuntimeError(f"leader integration failed: {sol.message}")
    return t, sol.y.T


def leader_extent(signal: LeaderSignal, leader_init, horizon: float, dt: float = 0.01):
    """(max over the grid of max(|x0|, |y0|), whether that max is still growing at the end)."""
    t, poses = leader_trajectory(signal, leader_init, horizon, dt)
    ext = np.abs(poses[:, :2]).max(axis=1)
    cut = int(0.9 * len(t))
    early, late = ext[:cut].max(), ext[cut:].max()
    growing = bool(late > early * (1.0 + 1e-6) + 1e-12)
    return float(ext.max()), growing


def leader_bound_estimate(signal: LeaderSignal, leader_init, horizon: float) -> float:
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    extent, growing = leader_extent(signal, leader_init, horizon)
    if growing:
        warnings.warn(
            f"leader extent still growing at t = {horizon:g}; bound M may be underestimated",
            LeaderBoundWarning,
            stacklevel=2,
        )
    return LEADER_MARGIN * extent
