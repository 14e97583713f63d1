"""Distributed formation tracking for unicycle fleets: certificates, simulation, monitors."""

from .config import ScenarioConfig, load_config
from .controllers import ControllerGains
from .kinematics import FleetState, LeaderSignal
from .network import DirectedNetwork, certify_network

__all__ = [
    "ScenarioConfig",
    "load_config",
    "ControllerGains",
    "FleetState",
    "LeaderSignal",
    "DirectedNetwork",
    "certify_network",
]
