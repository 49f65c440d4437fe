import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoisched.errors import GeneratorError, InvalidPenaltyError, TraceError
from aoisched.metrics import (PenaltyFunction, UpdateTrace, aoi_at, average_aoi, average_coud, packet_table,
                              peak_aoi, read_trace_csv, simulate_fcfs_queue, summary, voiu, write_trace_csv)


def brute_age(gen, recv, t, a0, start):
    """Age at ``t`` by scanning every packet."""
    latest = None
    for g, r in zip(gen, recv):
        if r <= t:
            latest = g
    return t - latest if latest is not None else a0 + (t - start)


def dense_average(trace, ta, tb, a0, start, n=4000, fn=lambda a: a):
    """Midpoint rule on a fine grid refined at every reception instant."""
    grid = np.union1d(np.linspace(ta, tb, n), trace.recv[(trace.recv > ta) & (trace.recv < tb)])
    mids = 0.5 * (grid[:-1] + grid[1:])
    ages = np.array([brute_age(trace.gen, trace.recv, m, a0, start) for m in mids])
    return float(np.sum(fn(ages) * np.diff(grid)) / (tb - ta))


def random_trace(rng, n=None):
    n = n or int(rng.integers(1, 40))
    return simulate_fcfs_queue(lambda r: r.exponential(1.0), lambda r: r.exponential(0.7), n,
                               seed=int(rng.integers(2**31)))


def test_trace_rejects_reordering():
    with pytest.raises(TraceError):
        UpdateTrace([0, 1], [3, 2])
    with pytest.raises(TraceError):
        UpdateTrace([0, 0], [1, 2])
    with pytest.raises(TraceError):
        UpdateTrace([2], [1])


def test_aoi_at_examples():
    tr = UpdateTrace.from_pairs([(0, 1)])
    assert aoi_at(tr, 1) == 1
    assert aoi_at(tr, 2.5) == 2.5
    empty = UpdateTrace.from_pairs([])
    assert aoi_at(empty, 2, a0=5, start=0) == 7
    with pytest.raises(TraceError):
        aoi_at(tr, -1)


def test_average_aoi_examples():
    tr = UpdateTrace([0, 2, 4, 6, 8], [1, 3, 5, 7, 9])
    assert average_aoi(tr, (1, 5)) == pytest.approx(2.0, abs=1e-15)
    instant = UpdateTrace(np.arange(1000.0), np.arange(1000.0))
    assert average_aoi(instant, (0, 999)) == pytest.approx(0.5, abs=1e-12)
    single = UpdateTrace.from_pairs([(0, 1)])
    assert average_aoi(single, (1, 3)) == pytest.approx(2.0)
    with pytest.raises(TraceError):
        average_aoi(single, (2, 2))


def test_peak_aoi_and_voiu_examples():
    tr = UpdateTrace([0, 2], [1, 3])  # X_2 = 2, T_2 = 1
    assert peak_aoi(tr).tolist() == [3.0]
    assert voiu(tr)[0] == pytest.approx(2 / 3)
    tr = UpdateTrace([0, 1, 3], [2, 2.5, 4])
    np.testing.assert_allclose(peak_aoi(tr), [2.5, 3.0])
    tr = UpdateTrace([0, 1], [0.5, 10])  # X_2 = 1, T_2 = 9
    assert voiu(tr)[0] == pytest.approx(0.1)
    instant = UpdateTrace(np.arange(0, 10, 2.5), np.arange(0, 10, 2.5))
    assert np.all(peak_aoi(instant) == 2.5) and np.all(voiu(instant) == 1.0)


def test_coud_examples():
    tr = UpdateTrace([0, 2, 4, 6, 8], [1, 3, 5, 7, 9])
    assert average_coud(tr, PenaltyFunction.linear(), (1, 5)) == average_aoi(tr, (1, 5))
    assert average_coud(tr, PenaltyFunction.polynomial(0, 0, 1), (1, 5)) == pytest.approx(13 / 3, rel=1e-14)
    assert average_coud(tr, PenaltyFunction.constant(4.5), (1, 5)) == pytest.approx(4.5, rel=1e-14)


def test_coud_numeric_penalty_matches_dense_oracle():
    rng = np.random.default_rng(5)
    tr = random_trace(rng, 30)
    pen = PenaltyFunction.exponential(0.3)
    ta, tb = tr.gen[0], tr.recv[-1]
    got = average_coud(tr, pen, (ta, tb))
    ref = dense_average(tr, ta, tb, 0.0, ta, n=20000, fn=lambda a: np.expm1(0.3 * a))
    assert got == pytest.approx(ref, rel=1e-6)


def test_penalty_must_be_monotone():
    with pytest.raises(InvalidPenaltyError):
        PenaltyFunction(lambda a: -a)
    with pytest.raises(InvalidPenaltyError):
        PenaltyFunction(lambda a: np.sin(a) + 2)
    with pytest.raises(InvalidPenaltyError):
        PenaltyFunction.polynomial(0, -1)


def test_fcfs_examples():
    tr = simulate_fcfs_queue(2.0, 1.0, 5)
    assert tr.recv.tolist() == [1, 3, 5, 7, 9]
    tr = simulate_fcfs_queue(1.0, 2.0, 5)
    assert tr.recv.tolist() == [2, 4, 6, 8, 10]
    a = random_trace(np.random.default_rng(1), 50)
    b = random_trace(np.random.default_rng(1), 50)
    np.testing.assert_array_equal(a.recv, b.recv)
    with pytest.raises(GeneratorError):
        simulate_fcfs_queue(1.0, 0.0, 3)
    with pytest.raises(GeneratorError):
        simulate_fcfs_queue(lambda r: -1.0, 1.0, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 5))
def test_average_matches_dense_integration(seed, a0):
    rng = np.random.default_rng(seed)
    tr = random_trace(rng)
    start = tr.gen[0]
    ta = start + rng.uniform(0, 1) * (tr.recv[-1] - start) * 0.5
    tb = tr.recv[-1] + rng.uniform(0, 2)
    got = average_aoi(tr, (ta, tb), a0=a0)
    assert got == pytest.approx(dense_average(tr, ta, tb, a0, start), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sample_path_properties(seed):
    rng = np.random.default_rng(seed)
    tr = random_trace(rng, int(rng.integers(2, 40)))
    v = voiu(tr)
    assert np.all((v > 0) & (v <= 1))
    np.testing.assert_array_equal(v == 1.0, tr.system_times[1:] == 0)
    eps = 1e-9
    for n in range(1, len(tr)):
        left = aoi_at(tr, tr.recv[n] - eps) + eps
        assert left == pytest.approx(peak_aoi(tr)[n - 1], abs=1e-7)
    # concatenation
    a, c = tr.gen[0], tr.recv[-1]
    b = a + rng.uniform(0.1, 0.9) * (c - a)
    whole = average_aoi(tr, (a, c))
    parts = (average_aoi(tr, (a, b)) * (b - a) + average_aoi(tr, (b, c)) * (c - b)) / (c - a)
    assert whole == pytest.approx(parts, rel=1e-12)
    ages = [aoi_at(tr, t) for t in np.linspace(a, c, 50)]
    assert whole >= min(ages) - 1e-12


def test_packet_table_and_csv_round_trip(tmp_path):
    tr = UpdateTrace([0, 2, 3.5], [1, 3, 5])
    rows = packet_table(tr)
    assert rows[0]["X"] == "" and rows[1]["A"] == 3.0
    p = tmp_path / "trace.csv"
    write_trace_csv(tr, p)
    assert p.read_text().splitlines()[0] == "n,t_gen,t_recv"
    back = read_trace_csv(p)
    np.testing.assert_array_equal(back.gen, tr.gen)
    s = summary(tr)
    assert s["mean_peak_aoi"] == pytest.approx((3 + 3) / 2)
