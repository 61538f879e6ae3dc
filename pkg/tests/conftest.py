import numpy as np
import pytest

from ftmas.cli import design
from ftmas.config import load_config
from ftmas.plant import LOE, OUTAGE, STUCK, ActuatorMode, FaultSpec, assemble_fault, auv_preset
from ftmas.synth_reconfig import synthesize_reconfig

OUTAGE_MODES = (ActuatorMode(), ActuatorMode(OUTAGE), ActuatorMode(), ActuatorMode())
LOE_STUCK_MODES = (ActuatorMode(LOE, 0.7), ActuatorMode(STUCK, 1.0), ActuatorMode(), ActuatorMode())


@pytest.fixture(scope="session")
def sentry():
    return auv_preset()


@pytest.fixture(scope="session")
def base_config():
    return load_config("version: 1")


@pytest.fixture(scope="session")
def preset(base_config):
    """Model, topology and healthy gains of the default configuration."""
    return design(base_config)


@pytest.fixture(scope="session")
def outage_gains(sentry):
    model = sentry[0]
    return synthesize_reconfig(model, assemble_fault(model, FaultSpec(0, OUTAGE_MODES)))


@pytest.fixture(scope="session")
def loe_stuck_gains(sentry):
    model = sentry[0]
    return synthesize_reconfig(model, assemble_fault(model, FaultSpec(1, LOE_STUCK_MODES)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
