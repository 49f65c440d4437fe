import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from aoisched import configs
from aoisched.errors import InvalidConfigError
from aoisched.model import (DeviceConfig, SystemConfig, harvest_quanta, harvest_quanta_table, load_config,
                            make_config, never_transmits, quantize_fading, state_count, tx_energy_quanta,
                            tx_quanta_table)


def test_quantizer_boundaries_are_exponential_quantiles():
    q = quantize_fading(10)
    np.testing.assert_allclose(q.boundaries, stats.expon.ppf(np.arange(1, 10) / 10), rtol=1e-14)
    np.testing.assert_allclose(q.boundaries[:3], [0.10536, 0.22314, 0.35667], atol=5e-6)


def test_quantizer_representatives():
    q = quantize_fading(10)
    np.testing.assert_allclose(q.representatives[:3], [0.05268, 0.16425, 0.28991], atol=5e-6)
    assert q.representatives[-1] == pytest.approx(2.30259 + 1, abs=5e-6)
    # last bin: conditional mean of Exp(1) above its lower edge
    lo = q.boundaries[-1]
    tail_mean = stats.expon.expect(lambda x: x, lb=lo, conditional=True)
    assert q.representatives[-1] == pytest.approx(tail_mean, rel=1e-9)


def test_quantizer_two_levels():
    q = quantize_fading(2)
    np.testing.assert_allclose(q.boundaries, [math.log(2)])
    np.testing.assert_allclose(q.representatives, [0.34657, 1.69315], atol=5e-6)
    np.testing.assert_array_equal(q.probabilities, [0.5, 0.5])


@pytest.mark.parametrize("bad", [1, 0, -3, 2.5])
def test_quantizer_rejects_bad_level_count(bad):
    with pytest.raises(InvalidConfigError):
        quantize_fading(bad)


@given(st.integers(2, 200))
def test_quantizer_invariants(L):
    q = quantize_fading(L)
    assert np.all(q.probabilities == 1.0 / L)
    assert math.isclose(q.probabilities.sum(), 1.0, rel_tol=1e-12)
    assert np.all(np.diff(q.representatives) > 0)
    edges = np.concatenate(([0.0], q.boundaries, [np.inf]))
    assert np.all(q.representatives >= edges[:-1]) and np.all(q.representatives[:-1] <= edges[1:-1])


def test_quantizer_mean_converges():
    q = quantize_fading(100)
    assert abs(q.representatives @ q.probabilities - 1.0) < 0.05


def test_reference_quanta_vector(single_config):
    assert [tx_energy_quanta(single_config, 0, k) for k in range(1, 11)] == [12, 4, 3, 2, 2, 1, 1, 1, 1, 1]
    # worst level is unusable even with a full battery
    assert tx_energy_quanta(single_config, 0, 1) > single_config.battery_levels - 1
    assert never_transmits(single_config) == []


def test_harvest_quanta_single(single_config):
    cfg = single_config
    factor = cfg.harvest_efficiency * cfg.dest_tx_power * cfg.path_gain(0) * cfg.slot_duration / cfg.energy_unit(0)
    assert factor == pytest.approx(4.70983, abs=1e-4)
    assert harvest_quanta(cfg, 0, 1) == 0
    assert harvest_quanta(cfg, 0, 5) == 2
    assert harvest_quanta_table(cfg).tolist() == [[0, 0, 1, 2, 2, 3, 4, 6, 9, 15]]


def test_zero_efficiency_harvests_nothing(single_config):
    cfg = single_config.replace(harvest_efficiency=0.0)
    assert harvest_quanta_table(cfg).max() == 0


def test_tiny_packet_costs_one_quantum(single_config):
    cfg = single_config.with_devices(packet_size=0.0)
    assert tx_quanta_table(cfg).tolist() == [[1] * 10]


def test_monotone_in_channel_level(single_config):
    assert np.all(np.diff(tx_quanta_table(single_config)[0]) <= 0)
    assert np.all(np.diff(harvest_quanta_table(single_config)[0]) >= 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e6, 2e7), st.floats(1.0, 3.0), st.floats(1e-4, 1e-3), st.floats(1.0, 3.0))
def test_quanta_scaling(size, size_factor, capacity, cap_factor):
    cfg = make_config([dict(distance=30.0, battery_capacity=capacity, packet_size=size, aoi_cap=5)])
    base = tx_quanta_table(cfg)
    bigger = tx_quanta_table(cfg.with_devices(packet_size=size * size_factor))
    assert np.all(bigger >= base)
    roomier = tx_quanta_table(cfg.with_devices(battery_capacity=capacity * cap_factor))
    assert np.all(roomier <= base)


def test_config_validation():
    dev = DeviceConfig(40.0, 3e-4, 12e6, 10)
    with pytest.raises(InvalidConfigError):
        SystemConfig(devices=(dev,), bandwidth=0.0)
    with pytest.raises(InvalidConfigError):
        SystemConfig(devices=(dev,), harvest_efficiency=1.5)
    with pytest.raises(InvalidConfigError):
        SystemConfig(devices=(DeviceConfig(40.0, 3e-4, 12e6, 10, weight=0.0),))
    with pytest.raises(InvalidConfigError):
        SystemConfig(devices=(dev,), channel_mode="duplex")
    with pytest.raises(InvalidConfigError):
        SystemConfig(devices=())


def test_config_json_round_trip(tmp_path, single_config):
    import json

    p = tmp_path / "c.json"
    p.write_text(json.dumps(single_config.to_dict()))
    assert load_config(p) == single_config
    bad = single_config.to_dict()
    bad["K"] = 3
    p.write_text(json.dumps(bad))
    with pytest.raises(InvalidConfigError):
        load_config(p)


def test_bundled_configs_load():
    for name in configs.NAMES:
        cfg = configs.load(name)
        assert cfg.channel_levels == 10 and cfg.battery_levels == 10
    assert state_count(configs.load("single")) == 1000
    assert state_count(configs.load("pair")) == 360_000
