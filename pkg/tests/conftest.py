import numpy as np
import pytest

from aoisched import configs
from aoisched.mdp import build_model
from aoisched.model import make_config


def tiny_config(**kw):
    """K=1, 3 battery levels, 2 channel levels, AoI cap 3: 18 states."""
    dev = dict(distance=40.0, battery_capacity=3e-4, packet_size=16e6, aoi_cap=3)
    dev.update(kw.pop("device", {}))
    kw = {"channel_levels": 2, "battery_levels": 3, **kw}
    return make_config([dev], **kw)


def random_config(rng: np.random.Generator, max_states: int = 500):
    """Small random scheduling instance with at most ``max_states`` states."""
    while True:
        K = int(rng.integers(1, 3))
        Lb = int(rng.integers(2, 6))
        Lh = int(rng.integers(2, 5))
        caps = [int(rng.integers(2, 9)) for _ in range(K)]
        n = 1
        for a in caps:
            n *= Lb * Lh * a
        if n > max_states:
            continue
        devices = [
            dict(distance=float(rng.uniform(10, 45)), battery_capacity=float(rng.uniform(1e-4, 5e-4)),
                 packet_size=float(rng.uniform(2e6, 14e6)), aoi_cap=caps[i], weight=float(rng.uniform(0.1, 1.0)))
            for i in range(K)
        ]
        return make_config(devices, channel_levels=Lh, battery_levels=Lb, antenna_gain=float(rng.uniform(3, 10)))


@pytest.fixture(scope="session")
def single_config():
    return configs.load("single")


@pytest.fixture(scope="session")
def single_model(single_config):
    return build_model(single_config)


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(tiny_config())
