import json

import numpy as np
import pytest

from phasecap.feeder import Branch, Bus, Feeder, Phase, generate_synthetic_feeder
from phasecap.ieee37 import build_ieee37, calibrated_config


def make_two_bus(
    r=0.01, x=0.02, p_load=0.5, q_load=0.25, slack_voltage=1.0, s_max=None
) -> Feeder:
    """Minimal single-branch feeder with identical phases and no mutuals."""
    z = np.diag([r + 1j * x] * 3)
    buses = (
        Bus(0, frozenset(Phase), np.zeros(3, dtype=complex)),
        Bus(1, frozenset(Phase),
            np.full(3, p_load + 1j * q_load, dtype=complex), s_max=s_max),
    )
    return Feeder(
        buses=buses,
        branches=(Branch(0, 1, z),),
        slack_bus=0,
        slack_voltage=slack_voltage,
        s_base_mva=3.0,
        v_base_kv=10.0,
    )


def feeder_from_dict(doc) -> str:
    return json.dumps(doc)


@pytest.fixture(scope="session")
def ieee37():
    return build_ieee37()


@pytest.fixture(scope="session")
def ieee37_config():
    return calibrated_config()


@pytest.fixture(scope="session")
def small_feeder():
    return generate_synthetic_feeder(20, seed=11, unbalance=0.15)


@pytest.fixture(scope="session")
def balanced_feeder():
    return generate_synthetic_feeder(16, seed=4, unbalance=0.0)
