import itertools

import numpy as np
import pytest

from fugu.control import (
    Horizon,
    bba_budget,
    bba_select,
    brute_force_plan,
    deterministic_distributions,
    mpc_hm_plan,
    mpc_plan,
    relative_error,
    robust_mpc_hm_plan,
    robust_rate,
)
from fugu.domain import PlaybackState, QoeWeights, chunk_qoe, make_chunk
from fugu.predictors import ThroughputHistory, TransportStats, discretize, point_mass

from oracles import planning_instance

W = QoeWeights()
H1 = Horizon(1)


def ab_dists():
    # version 0 (Q=14): T=0.125 (bin 0); version 1 (Q=16): T=0.5 (bin 1)
    return point_mass([[0, 1]])


@pytest.mark.parametrize("buffer, version, value", [(2.0, 1, 15.0), (0.125, 0, 13.0)])
def test_one_step_examples(two_version_chunk, buffer, version, value):
    state = PlaybackState(buffer, 15.0, True)
    for planner in (mpc_plan, brute_force_plan):
        plan = planner([two_version_chunk], state, ab_dists(), W, H1)
        assert plan.version == version
        assert plan.expected_qoe == pytest.approx(value)


def test_brute_force_single_outcome_equals_chunk_qoe(two_version_chunk):
    chunk = make_chunk(0, [100_000], [12.0])
    state = PlaybackState(0.3, 10.0, True)
    plan = brute_force_plan([chunk], state, point_mass([[2]]), W, H1)
    assert plan.expected_qoe == chunk_qoe(chunk.versions[0], 10.0, 1.0, 0.3, W)


def test_ties_go_to_lowest_version():
    chunk = make_chunk(0, [100, 200], [12.0, 12.0])
    state = PlaybackState(5.0, 12.0, True)
    d = point_mass([[1, 1]])
    assert brute_force_plan([chunk], state, d, W, H1).version == 0
    assert mpc_plan([chunk], state, d, W, H1).version == 0


def test_brute_force_refuses_large_instances():
    chunks = [make_chunk(j, [1, 2, 3, 4, 5], [1, 2, 3, 4, 5]) for j in range(2)]
    with pytest.raises(ValueError):
        brute_force_plan(chunks, PlaybackState(1.0), np.full((2, 5, 21), 1 / 21), W, Horizon(2))


def test_dp_matches_oracle_exactly_on_grid_aligned_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        chunks, state, d = planning_instance(rng, representable=True)
        a = mpc_plan(chunks, state, d, W, Horizon(3))
        b = brute_force_plan(chunks, state, d, W, Horizon(3))
        assert abs(a.expected_qoe - b.expected_qoe) <= 1e-9
        assert a.version == b.version


def brute_open_loop(chunks, state, rep_times):
    """Direct evaluation of every action sequence under deterministic times."""
    best, best_seq = -np.inf, None
    for seq in itertools.product(range(len(chunks[0].versions)), repeat=len(chunks)):
        b, prev, total = state.buffer, state.last_quality, 0.0
        for j, a in enumerate(seq):
            v = chunks[j].versions[a]
            t = rep_times[j][a]
            total += chunk_qoe(v, prev, t, b, W)
            b = min(max(b - t, 0.0) + v.duration, W.max_buffer)
            prev = v.quality
        if total > best:
            best, best_seq = total, seq
    return best, best_seq


def test_deterministic_predictor_matches_sequence_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(60):
        chunks, state, _ = planning_instance(rng, representable=True, max_bins=1)
        h, v = len(chunks), len(chunks[0].versions)
        bins = rng.integers(1, 12, size=(h, v))
        times = bins * 0.5
        best, seq = brute_open_loop(chunks, state, times.tolist())
        plan = mpc_plan(chunks, state, point_mass(bins), W, Horizon(3))
        assert plan.expected_qoe == pytest.approx(best, abs=1e-9)


def test_point_mass_one_step_is_argmax_of_chunk_qoe():
    rng = np.random.default_rng(3)
    for _ in range(100):
        chunks, state, _ = planning_instance(rng, representable=False, max_steps=1)
        bins = rng.integers(0, 21, size=(1, len(chunks[0].versions)))
        plan = mpc_plan(chunks, state, point_mass(bins), W, H1)
        direct = [chunk_qoe(v, state.last_quality, 0.125 if k == 0 else 0.5 * k, state.buffer, W)
                  for v, k in zip(chunks[0].versions, bins[0])]
        assert plan.version == int(np.argmax(direct))


def test_larger_buffer_never_lowers_value():
    rng = np.random.default_rng(5)
    for _ in range(50):
        chunks, state, _ = planning_instance(rng, representable=True, max_bins=1)
        bins = rng.integers(1, 12, size=(len(chunks), len(chunks[0].versions)))
        d = point_mass(bins)
        values = [mpc_plan(chunks, PlaybackState(b, state.last_quality, True), d, W, Horizon(3)).expected_qoe
                  for b in np.arange(0, 15.25, 0.25)]
        assert all(y >= x - 1e-9 for x, y in zip(values, values[1:]))


def test_invalid_distribution_falls_back(two_version_chunk):
    bad = np.full((1, 2, 21), np.nan)
    plan = mpc_plan([two_version_chunk], PlaybackState(3.0), bad, W, H1)
    assert plan.version == 0 and plan.fallback


def test_planners_are_deterministic():
    rng = np.random.default_rng(9)
    chunks, state, d = planning_instance(rng, representable=False)
    assert mpc_plan(chunks, state, d) == mpc_plan(chunks, state, d)


def test_horizon_must_divide_buffer():
    with pytest.raises(ValueError):
        Horizon(2, 0.4).levels(15.0)
    assert Horizon().levels(15.0) == 61


def test_hm_plan_discretizes_size_over_rate():
    chunks = [make_chunk(0, [500_000, 1_000_000], [10.0, 12.0])]
    d = deterministic_distributions(chunks, 1e6, 1)
    assert np.argmax(d[0, 0]) == 1 == discretize(0.5)
    hist = ThroughputHistory((1e6,) * 5)
    assert mpc_hm_plan(chunks, PlaybackState(5.0, 10.0, True), hist, W, H1) == \
        mpc_plan(chunks, PlaybackState(5.0, 10.0, True), d, W, H1)


def test_hm_plan_picks_best_quality_on_fast_network():
    chunks = [make_chunk(j, [1e5, 2e5, 4e5], [10.0, 14.0, 18.0]) for j in range(5)]
    hist = ThroughputHistory((1e9,) * 5)
    assert mpc_hm_plan(chunks, PlaybackState(4.0, 18.0, True), hist, W).version == 2


def test_hm_cold_start():
    chunks = [make_chunk(0, [1e5, 2e5], [10.0, 14.0])]
    empty = ThroughputHistory()
    plan = mpc_hm_plan(chunks, PlaybackState(), empty, W)
    assert plan.version == 0 and plan.fallback
    plan = mpc_hm_plan(chunks, PlaybackState(5.0), empty, W, stats=TransportStats(delivery_rate=1e7))
    assert not plan.fallback and plan.version == 1


def test_robust_deflation():
    assert robust_rate(1e6, []) == 1e6
    assert robust_rate(1e6, [0.2, 1.0, 0.5]) == 5e5
    assert robust_rate(1e6, [3.0, 0, 0, 0, 0, 0]) == 1e6  # only the last five count
    assert relative_error(2.0, 1.0) == 1.0
    chunks = [make_chunk(0, [500_000, 1_000_000], [10.0, 12.0])]
    hist = ThroughputHistory((1e6,) * 5)
    s = PlaybackState(5.0, 10.0, True)
    assert robust_mpc_hm_plan(chunks, s, hist, [0.0], W, H1) == mpc_hm_plan(chunks, s, hist, W, H1)
    slow = deterministic_distributions(chunks, robust_rate(1e6, [1.0]), 1)
    assert np.argmax(slow[0, 0]) == discretize(1.0)  # 0.5 s doubled


def test_bba_examples():
    chunk = make_chunk(0, [1_000_000, 2_000_000, 3_000_000], [10.0, 14.0, 13.0])
    assert bba_select(chunk, PlaybackState(0.0)) == 0
    assert bba_select(chunk, PlaybackState(15.0)) == 1  # highest SSIM overall
    mid = (3.0 + 13.5) / 2
    assert bba_budget(chunk, mid, 3.0, 13.5) == 2_000_000
    assert bba_select(chunk, PlaybackState(mid)) == 1


def test_bba_budget_monotone_in_buffer():
    chunk = make_chunk(0, [1e5, 3e5, 7e5], [9.0, 12.0, 15.0])
    budgets = [bba_budget(chunk, b, 3.0, 13.5) for b in np.linspace(0, 15, 61)]
    assert all(y >= x for x, y in zip(budgets, budgets[1:]))
    with pytest.raises(ValueError):
        bba_select(chunk, PlaybackState(1.0), 5.0, 5.0)
