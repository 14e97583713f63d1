import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

from cooptrack.config import load_config  # noqa: E402
from cooptrack.controllers import ControllerGains  # noqa: E402
from cooptrack.simulation import (  # noqa: E402
    IntegratorConfig, attach_lyapunov, initial_fleet, run_scenario, simulate,
)

STANDIN_EDGES = [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 2, 1.0)]


def sabotaged(run, horizon, k_omega=None, k_v=None, law=None, fleet=None):
    """Re-simulate with altered physical gains while keeping the nominal certificates."""
    cfg = run.config
    g = ControllerGains(cfg.gains.k_omega if k_omega is None else k_omega, cfg.gains.k_v if k_v is None else k_v)
    law = law or cfg.law
    integ = IntegratorConfig(cfg.integration_step(law), horizon, cfg.log_every)
    log = simulate(cfg.network, cfg.signal, g, fleet or initial_fleet(cfg), law, integ, T0=cfg.T0,
                   offsets=cfg.offsets)
    return attach_lyapunov(log, run.consts, run.coupling, cfg.signal)


@pytest.fixture(scope="session")
def ref_cfg():
    return load_config("paper_sec4")


@pytest.fixture(scope="session")
def ref_sampled_run(ref_cfg):
    return run_scenario(ref_cfg)


@pytest.fixture(scope="session")
def ref_continuous_run(ref_cfg):
    return run_scenario(ref_cfg.with_updates(law="continuous"))


@pytest.fixture(scope="session")
def single_run():
    return run_scenario(load_config("single_follower"))


@pytest.fixture(scope="session")
def chain_run():
    return run_scenario(load_config("chain2_sampled"))
