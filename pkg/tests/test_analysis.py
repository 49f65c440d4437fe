import numpy as np
import pytest
from scipy import stats

from aoisched.analysis import (batch_means, compare_policies, policy_slice, simulate_policy, trajectory_rows,
                               transmit_nesting, transmits_whenever_feasible)
from aoisched.errors import InvalidRequestError
from aoisched.mdp import SystemState, build_model
from aoisched.model import tx_quanta_table
from aoisched.solver import always_harvest, solve

from conftest import random_config, tiny_config


@pytest.fixture(scope="module")
def single_solutions(single_model):
    return solve(single_model, "aoi"), solve(single_model, "throughput")


def test_always_harvest_simulation_saturates(single_model):
    _, summ = simulate_policy(single_model, always_harvest(single_model), 100_000, seed=1)
    assert abs(summ.avg_aoi[0] - 10.0) <= max(summ.avg_aoi_halfwidth[0], 1e-3)
    assert summ.throughput == 0.0


def test_same_seed_same_trajectory(single_model, single_solutions):
    pol = single_solutions[0].policy
    a, _ = simulate_policy(single_model, pol, 5000, seed=9)
    b, _ = simulate_policy(single_model, pol, 5000, seed=9)
    c, _ = simulate_policy(single_model, pol, 5000, seed=10)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_trajectory_follows_model(single_model, single_solutions):
    pol = single_solutions[0].policy
    traj, _ = simulate_policy(single_model, pol, 3000, seed=2)
    n_h = single_model.n_h
    for t in range(traj.horizon - 1):
        xs, _ = single_model.successors_x(int(traj.states[t]), int(traj.actions[t]))
        assert traj.states[t + 1] // n_h in xs
    rows = list(trajectory_rows(single_model, traj))
    assert len(rows) == 3000 and len(rows[0]) == 5


def test_empirical_transition_frequencies():
    # chi-square goodness of fit of the channel redraw on well-visited (state, action) pairs
    model = build_model(tiny_config(channel_levels=4))
    pol = solve(model).policy
    traj, _ = simulate_policy(model, pol, 200_000, seed=4)
    pairs = traj.states[:-1] * model.n_actions + traj.actions[:-1]
    checked = 0
    for key in np.unique(pairs):
        idx = np.flatnonzero(pairs == key)
        if len(idx) < 1000:
            continue
        s, a = divmod(int(key), model.n_actions)
        xs, px = model.successors_x(s, a)
        expected = np.outer(px, model.h_probs).ravel() * len(idx)
        succ = np.add.outer(xs * model.n_h, np.arange(model.n_h)).ravel()
        observed = np.array([(traj.states[idx + 1] == k).sum() for k in succ])
        assert observed.sum() == len(idx)
        assert stats.chisquare(observed, expected).pvalue > 0.01 / 20
        checked += 1
    assert checked > 0


def test_random_instance_monte_carlo():
    rng = np.random.default_rng(21)
    model = build_model(random_config(rng, 300))
    res = solve(model)
    _, summ = simulate_policy(model, res.policy, 300_000, seed=3)
    assert abs(summ.weighted_cost - res.gain) <= 3 * summ.weighted_cost_halfwidth + 0.01 * res.gain


def test_batch_means_constant_and_iid():
    m, h = batch_means(np.full(1000, 3.0))
    assert m == 3.0 and h == 0.0
    x = np.random.default_rng(0).normal(size=200_000)
    m, h = batch_means(x)
    assert abs(m) < 4 * h and h == pytest.approx(1.96 * 1 / np.sqrt(200_000), rel=0.5)


def test_single_slice_structure(single_model, single_solutions):
    sl = policy_slice(single_model, single_solutions[0].policy, aoi_values=(1, 10))
    assert transmits_whenever_feasible(single_model, sl, 10)
    assert transmit_nesting(sl, 1, 10)
    assert np.all(sl.grid[:, 0, :] == 0)  # empty battery always harvests
    cost = tx_quanta_table(single_model.config)[0]
    for b in range(1, 6):
        lowest = int(np.flatnonzero(cost <= b)[0])
        assert sl.grid[0, b, lowest] == 0
    rows = list(sl.rows())
    assert len(rows) == 2 * 10 * 10 and rows[0] == (1, 0, 1, "H")


def test_slice_requires_fixing_for_two_devices():
    cfg = tiny_config().replace(devices=tiny_config().devices * 2)
    model = build_model(cfg)
    pol = solve(model).policy
    with pytest.raises(InvalidRequestError):
        policy_slice(model, pol, device=1)
    sl = policy_slice(model, pol, device=2, fixed={1: (0, 1, 3)})
    assert sl.grid.shape == (2, 3, 2)
    s = model.encode(SystemState.reciprocal([0, 2], [1, 2], [3, 3]))
    assert sl.grid[1, 2, 1] == pol[s]
    with pytest.raises(InvalidRequestError):
        policy_slice(model, pol, device=1, aoi_values=(9,), fixed={2: (0, 1, 1)})


def test_policy_diff(single_model, single_solutions):
    aoi, thr = single_solutions
    assert compare_policies(single_model, aoi.policy, aoi.policy).empty
    diff = compare_policies(single_model, aoi.policy, thr.policy)
    assert not diff.empty
    assert diff.transitions[("H", "T1")] > 0
    # good channel, low battery: throughput transmits, age policy harvests
    hits = [s for s, a, b in zip(diff.states, diff.actions_a, diff.actions_b) if a == 0 and b == 1
            and single_model.decode(int(s)).uplink[0] >= 6 and single_model.decode(int(s)).battery[0] <= 3]
    assert hits
    scaled = solve(single_model, "aoi", [7.5])
    assert compare_policies(single_model, aoi.policy, scaled.policy).empty
    with pytest.raises(InvalidRequestError):
        compare_policies(single_model, aoi.policy, always_harvest(build_model(tiny_config())))
