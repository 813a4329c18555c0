import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fugu.data import ClientBufferRow, Telemetry, VideoAckedRow, VideoSentRow
from fugu.domain import db_to_ssim
from fugu.stats import (
    StreamSummary,
    aggregate_ssim,
    aggregate_stall_ratio,
    aggregate_variation,
    bootstrap_stall_ci,
    compare_schemes,
    dumps_plot_data,
    loads_plot_data,
    scheme_report,
    summarize_stream,
    summarize_values,
    weighted_mean_se,
)

from oracles import stall_population


def summary(watch, stall=0.0, ssim=15.0, var=0.0, eligible=True):
    return StreamSummary(watch, stall, 0.0, ssim, var, eligible)


def test_summarize_values_examples():
    s = summarize_values(100.0, 2.0, 0.5, [10.0] * 60, 2.0)
    assert (s.stall_time, s.watch_time) == (2.0, 100.0)
    assert s.ssim_variation_db == 0
    s = summarize_values(6.0, 0.0, 0.0, [10.0, 14.0, 12.0], 2.0)
    assert s.ssim_variation_db == pytest.approx(3.0)
    assert s.mean_ssim_db == pytest.approx(12.0)


def test_mean_weights_by_played_portion():
    # 3 s played of 2 s chunks: first chunk fully, second for 1 s, third never
    s = summarize_values(3.0, 0.0, 0.0, [10.0, 16.0, 40.0], 2.0)
    assert s.mean_ssim_db == pytest.approx(12.0)
    assert s.ssim_variation_db == pytest.approx(6.0)
    assert not s.eligible


def test_nothing_played_is_ineligible():
    s = summarize_values(0.0, 0.0, 30.0, [], 2.0)
    assert s.mean_ssim_db is None and not s.eligible


def test_aggregate_stall_examples():
    assert aggregate_stall_ratio([summary(100, 1), summary(100, 0)]) == 0.005
    assert aggregate_stall_ratio([summary(50), summary(70)]) == 0
    assert aggregate_stall_ratio([summary(80, 4)]) == 0.05
    with pytest.raises(ValueError):
        aggregate_stall_ratio([summary(100, 1, eligible=False)])


def test_ineligible_streams_never_matter():
    base = [summary(100, 1, 12.0, 0.2), summary(300, 0, 16.0, 0.4)]
    noisy = base + [summary(3.5, 3.0, 2.0, 9.0, eligible=False)]
    assert aggregate_stall_ratio(noisy) == aggregate_stall_ratio(base)
    assert aggregate_ssim(noisy) == aggregate_ssim(base)
    assert aggregate_variation(noisy) == aggregate_variation(base)
    assert bootstrap_stall_ci(noisy, 200, seed=1) == bootstrap_stall_ci(base, 200, seed=1)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(1, 1e4), st.floats(0, 1)), min_size=1, max_size=20),
       st.integers(0, 19), st.floats(0.01, 0.99))
def test_stall_ratio_invariant_under_splitting(streams, which, frac):
    items = [summary(w, w * r) for w, r in streams]
    k = which % len(items)
    w, s = items[k].watch_time, items[k].stall_time
    split = items[:k] + [summary(w * frac, s * frac), summary(w * (1 - frac), s * (1 - frac))] + items[k + 1:]
    assert aggregate_stall_ratio(split) == pytest.approx(aggregate_stall_ratio(items), rel=1e-12)


def test_aggregate_ssim_examples():
    mean, se = aggregate_ssim([summary(1, ssim=10.0), summary(3, ssim=20.0)])
    assert mean == pytest.approx(17.5)
    assert aggregate_ssim([summary(5, ssim=14.0)] * 3)[1] == 0
    assert aggregate_ssim([summary(5, ssim=14.0)])[1] is None


def test_weighted_se_reduces_to_unweighted():
    x = np.random.default_rng(0).normal(15, 2, 40)
    mean, se = weighted_mean_se(x, np.ones_like(x))
    assert mean == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / np.sqrt(len(x)))


def test_bootstrap_trivial_cases():
    same = [summary(100, 2)] * 50
    lo, hi = bootstrap_stall_ci(same, 300, seed=3)
    assert lo == pytest.approx(0.02) and hi == pytest.approx(0.02)
    pop = stall_population(np.random.default_rng(1), 200)
    assert bootstrap_stall_ci(pop, 300, seed=9) == bootstrap_stall_ci(pop, 300, seed=9)
    with pytest.raises(ValueError):
        bootstrap_stall_ci([summary(10)], 100)


def test_bootstrap_width_shrinks_like_inverse_sqrt_n():
    rng = np.random.default_rng(4)
    widths = {}
    for n in (100, 400):
        w = []
        for rep in range(40):
            lo, hi = bootstrap_stall_ci(stall_population(rng, n), 400, seed=rep)
            w.append(hi - lo)
        widths[n] = np.mean(w)
    assert 1.6 <= widths[100] / widths[400] <= 2.4


def test_bootstrap_coverage_smoke():
    rng = np.random.default_rng(12)
    hits = sum(lo <= 0.01 <= hi for lo, hi in
               (bootstrap_stall_ci(stall_population(rng, 500), 400, seed=r) for r in range(40)))
    assert hits >= 32


def test_scheme_report_and_comparison():
    rng = np.random.default_rng(2)
    a = scheme_report("a", stall_population(rng, 200, true_ratio=0.01))
    b = scheme_report("b", stall_population(rng, 200, true_ratio=0.2))
    zero = scheme_report("z", [summary(100.0, 0.0, 14.0 + k % 3) for k in range(20)])
    assert zero.stall_ratio == 0 and zero.stall_ci == (0.0, 0.0)
    for r in (a, b, zero):
        assert r.stall_ci[0] <= r.stall_ratio <= r.stall_ci[1]
        assert r.ssim_ci[0] <= r.mean_ssim_db <= r.ssim_ci[1]
    cmp = compare_schemes([a, b])
    assert cmp.distinguishable[("a", "b")]
    assert "a vs b: distinguishable" in cmp.table()
    one = compare_schemes([a])
    assert len(one.table().strip().splitlines()) == 2
    assert scheme_report("a", stall_population(np.random.default_rng(5), 50), seed=4) == \
        scheme_report("a", stall_population(np.random.default_rng(5), 50), seed=4)


def test_plot_data_round_trip():
    rows = [dict(name="x", stall=0.1 / 3, stall_lo=0.01, stall_hi=0.05, ssim=15.123456789,
                 ssim_lo=15.0, ssim_hi=15.3)]
    assert loads_plot_data(dumps_plot_data(rows)) == rows
    with pytest.raises(ValueError):
        loads_plot_data("a,b\n1,2\n")


def test_summarize_telemetry_matches_values():
    sid = 7
    sent = [VideoSentRow(10.0 + k, sid, 1, k * 180180, 1000, db_to_ssim(q), 0, 0, 0, 0, 0)
            for k, q in enumerate([10.0, 14.0, 12.0])]
    acked = [VideoAckedRow(10.5 + k, sid, 1, k * 180180) for k in range(3)]
    buf = [ClientBufferRow(10.0, sid, 1, "startup", 0.0, 0.0),
           ClientBufferRow(10.5, sid, 1, "play", 2.0, 0.0),
           ClientBufferRow(16.5, sid, 1, "periodic", 1.0, 0.0)]
    s = summarize_stream(Telemetry(sent, acked, buf), 2.0)
    assert s.watch_time == 6.0 and s.startup_time == 0.5
    assert s.ssim_variation_db == pytest.approx(3.0)
    bad = buf + [ClientBufferRow(17.0, sid, 1, "periodic", 0.0, 0.0)]
    bad[2] = ClientBufferRow(16.5, sid, 1, "periodic", 1.0, 1.0)
    with pytest.raises(ValueError):
        summarize_stream(Telemetry(sent, acked, bad), 2.0)
