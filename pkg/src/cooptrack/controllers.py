"""Distributed continuous and sample-and-hold feedback laws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import FleetState, error_state, rotate_to_body
from .network import DirectedNetwork

SAMPLE_TOL = 1e-9


class StaleHoldError(RuntimeError):
    """A held sample was used outside its sampling interval."""


@dataclass(frozen=True)
class ControllerGains:
    # sign is not enforced here; certification and config validation require > 0
    k_omega: float
    k_v: float

    @property
    def positive(self) -> bool:
        return self.k_omega > 0 and self.k_v > 0


@dataclass(frozen=True)
class SamplingSchedule:
    period: float
    origin: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"sampling period must be positive, got {self.period}")

    def instant(self, k: int) -> float:
        return self.origin + k * self.period

    def index(self, t: float) -> int:
        """Index k of the interval [t_k, t_{k+1}) containing t."""
        return int(np.floor((t - self.origin) / self.period + SAMPLE_TOL))

    def is_instant(self, t: float) -> bool:
        q = (t - self.origin) / self.period
        return abs(q - round(q)) <= SAMPLE_TOL * max(1.0, abs(q))


@dataclass(frozen=True, eq=False)
class HeldErrors:
    """Virtual errors frozen at a sampling instant, plus the error coordinates
    at that instant (for the hold-deviation monitors)."""

    e_theta_held: np.ndarray
    e_xtilde_held: np.ndarray
    bar_theta: np.ndarray
    bar_x: np.ndarray
    sampled_at: float
    index: int = 0

    def theta_deviation(self, bar_theta_now):
        """bar_theta(t_k) - bar_theta(t)."""
        return self.bar_theta - bar_theta_now

    def x_deviation(self, bar_x_now):
        """bar_x(t_k) - bar_x(t)."""
        return self.bar_x - bar_x_now


def virtual_errors(fleet: FleetState, net: DirectedNetwork):
    """Neighbour-weighted disagreement sums e_theta and e_xtilde (length N each)."""
    poses = fleet.stacked()
    theta = poses[:, 2]
    xt, _ = rotate_to_body(poses[:, 0], poses[:, 1], theta)
    # weights over nodes 0..N for each follower row
    w = np.column_stack([net.leader_links, net.adjacency])
    e_theta = (w * (theta[1:, None] - theta[None, :])).sum(axis=1)
    e_x = (w * (xt[1:, None] - xt[None, :])).sum(axis=1)
    return e_theta, e_x


def continuous_law(e_theta, e_xtilde, omega0, v0, gains: ControllerGains):
    """Returns ``(omega, v)`` arrays for all followers."""
    omega = -gains.k_omega * np.asarray(e_theta) + omega0
    v = -gains.k_v * np.asarray(e_xtilde) + v0
    return omega, v


def sampled_law(held: HeldErrors, omega0_now, v0_now, gains: ControllerGains,
                t: float | None = None, period: float | None = None):
    """Held feedback, live feedforward.  With ``t`` and ``period`` given, refuses a
    hold older than one sampling period."""
    if t is not None and period is not None:
        if t < held.sampled_at - SAMPLE_TOL * period or t > held.sampled_at + period * (1 + SAMPLE_TOL):
            raise StaleHoldError(
                f"hold from t_k = {held.sampled_at:g} used at t = {t:g} (period {period:g})"
            )
    return continuous_law(held.e_theta_held, held.e_xtilde_held, omega0_now, v0_now, gains)


def make_hold(fleet: FleetState, net: DirectedNetwork, index: int = 0) -> HeldErrors:
    e_theta, e_x = virtual_errors(fleet, net)
    err = error_state(fleet)
    return HeldErrors(e_theta, e_x, err.bar_theta, err.bar_x, fleet.time, index)
