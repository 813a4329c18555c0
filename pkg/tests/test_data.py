import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fugu.data import (
    EPOCH0,
    ClientBufferRow,
    Telemetry,
    VideoAckedRow,
    VideoSentRow,
    build_training_set,
    emit_archive,
    join_transmission_times,
    parse_archive,
    read_expt_settings,
    training_arrays,
    write_expt_settings,
)
from fugu.predictors import discretize, discretize_throughput
from fugu.schemes import make_scheme
from fugu.simulator import SessionConfig, run_session, synthetic_trace, synthetic_video


def sent(t, sid=1, ts=0, size=1000, ssim=0.9):
    return VideoSentRow(t, sid, 1, ts, size, ssim, 10.0, 5.0, 0.04, 0.05, 1e6)


def acked(t, sid=1, ts=0):
    return VideoAckedRow(t, sid, 1, ts)


def test_row_invariants():
    with pytest.raises(ValueError):
        sent(0.0, size=0)
    with pytest.raises(ValueError):
        sent(0.0, ssim=1.2)
    with pytest.raises(ValueError):
        ClientBufferRow(0.0, 1, 1, "paused", 0.0, 0.0)


def test_empty_archive_round_trip(tmp_path):
    paths = emit_archive(Telemetry(), tmp_path)
    assert all(len(p.read_text().splitlines()) == 1 for p in paths)
    tel, report = parse_archive([tmp_path])
    assert tel == Telemetry() and report.skipped == 0


def test_bad_rows_are_counted(tmp_path):
    tel = Telemetry([sent(1.0), sent(2.0, ts=180180)], [], [])
    emit_archive(tel, tmp_path)
    path = tmp_path / "video_sent.csv"
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace("0.9,", "1.2,")
    lines.append("not,enough,fields")
    path.write_text("\n".join(lines) + "\n")
    back, report = parse_archive([tmp_path])
    assert back.video_sent == [sent(1.0)]
    assert report.skipped == 2


def test_missing_archive_is_an_error(tmp_path):
    with pytest.raises(OSError):
        parse_archive([tmp_path / "absent"])


def session_telemetry(seed):
    rng = np.random.default_rng(seed)
    video = synthetic_video(rng, num_chunks=60)
    trace = synthetic_trace(rng, duration=600, mean_rate=float(rng.uniform(5e4, 5e5)))
    cfg = SessionConfig("mpc_hm", watch_duration=float(rng.uniform(10, 120)),
                        first_chunk=int(rng.integers(60)), trace_offset=float(rng.uniform(0, 100)))
    return run_session(cfg, trace, video, make_scheme("mpc_hm"), stream_id=seed)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_archive_round_trip_is_bit_identical(tmp_path_factory, seed):
    res, tel = session_telemetry(seed)
    d = tmp_path_factory.mktemp("a")
    emit_archive(tel, d)
    back, report = parse_archive([d])
    assert back == tel and report.skipped == 0
    d2 = tmp_path_factory.mktemp("b")
    emit_archive(back, d2)
    for name in ("video_sent.csv", "video_acked.csv", "client_buffer.csv"):
        assert (d / name).read_bytes() == (d2 / name).read_bytes()
    assert len(tel.video_sent) == len(res.records) + res.never_delivered
    assert len(tel.video_acked) <= len(tel.video_sent)


def test_join_examples():
    j = join_transmission_times([sent(100.0)], [acked(100.8)])
    assert j.records[0].transmission_time == pytest.approx(0.8)
    j = join_transmission_times([sent(100.0), sent(101.0, ts=5)], [acked(100.8)])
    assert j.never_acked == 1 and len(j.records) == 1
    j = join_transmission_times([sent(100.0)], [acked(99.0)])
    assert j.rejected == 1 and not j.records
    with pytest.raises(ValueError):
        join_transmission_times([sent(1.0), sent(2.0)], [])
    with pytest.raises(ValueError):
        join_transmission_times([], [acked(1.0), acked(2.0)])


def test_join_orders_by_video_ts_and_counts_unacked():
    _, tel = session_telemetry(3)
    rows = list(reversed(tel.video_sent))
    j = join_transmission_times(rows, tel.video_acked)
    for chunks in j.streams.values():
        assert [c.video_ts for c in chunks] == sorted(c.video_ts for c in chunks)
    assert len(tel.video_sent) - len(tel.video_acked) == j.never_acked


def stream(n, day=0, sid=1, t=0.8):
    base = EPOCH0 + day * 86400
    return ([sent(base + 10 * k, sid, k, 1000 * (k + 1)) for k in range(n)],
            [acked(base + 10 * k + t, sid, k) for k in range(n)])


def test_training_set_examples():
    s, a = stream(10)
    ex = build_training_set(join_transmission_times(s, a), as_of_day=0)
    assert len(ex) == 10 and all(e.target_bin == 2 == discretize(0.8) for e in ex)
    first = ex[0].input
    assert not any(first.valid_slots)
    assert np.all(first.vector()[:16] == 0) and first.vector()[16] == 0.01
    assert ex[9].input.past_sizes == tuple(float(1000 * (k + 1)) for k in range(1, 9))
    s, a = stream(3, day=0)
    ex = build_training_set(join_transmission_times(s, a), as_of_day=13)
    assert ex[0].day_age == 13 and ex[0].weight == pytest.approx(0.2542, abs=1e-4)
    assert build_training_set(join_transmission_times(s, a), as_of_day=14) == []
    assert build_training_set(join_transmission_times(s, a), as_of_day=0, window_days=1)[0].weight == 1.0


def test_training_weights_non_increasing_and_targets_consistent():
    tel = Telemetry()
    for seed in range(4):
        _, t = session_telemetry(seed)
        tel.extend(t)
    j = join_transmission_times(tel.video_sent, tel.video_acked)
    ex = build_training_set(j, as_of_day=0)
    assert all(e.target_bin == discretize(e.transmission_time) for e in ex)
    ages = {e.day_age: e.weight for e in ex}
    assert all(0 < w <= 1 for w in ages.values())


def test_training_arrays_variants():
    s, a = stream(5)
    ex = build_training_set(join_transmission_times(s, a), 0)
    x, y, w = training_arrays(ex)
    assert x.shape == (5, 22) and list(y) == [2] * 5
    xt, yt, _ = training_arrays(ex, "throughput")
    assert xt.shape == (5, 21)
    assert list(yt) == list(discretize_throughput(np.array([1000 * (k + 1) / 0.8 for k in range(5)])))
    with pytest.raises(ValueError):
        training_arrays([])


def test_expt_settings_round_trip(tmp_path):
    write_expt_settings(tmp_path / "e.csv", {1: "bba", 4: "fugu"})
    assert read_expt_settings(tmp_path / "e.csv") == {1: "bba", 4: "fugu"}


def test_multistep_training_set():
    s, a = stream(6)
    j = join_transmission_times(s, a)
    ex = build_training_set(j, 0, steps=3)
    assert len(ex) == 6 + 5 + 4
    from_first = [e for e in ex if not e.input.past_sizes]
    assert [e.input.step for e in from_first] == [0, 1, 2]
    assert [e.input.candidate_size for e in from_first] == [1000.0, 2000.0, 3000.0]
    x, _, _ = training_arrays(ex)
    assert x.shape == (15, 23) and set(np.round(x[:, -1] * 5, 9)) == {0, 1, 2}
    xt, _, _ = training_arrays(ex, "throughput")
    assert xt.shape == (6, 21)
