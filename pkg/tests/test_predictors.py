import numpy as np
import pytest
from hypothesis import given, strategies as st

from fugu import nn
from fugu.predictors import (
    BIN_EDGES,
    NUM_BINS,
    THROUGHPUT_REPRESENTATIVES,
    PointTtpPredictor,
    ThroughputHistory,
    ThroughputPredictor,
    TransportStats,
    TtpInput,
    TtpPredictor,
    bin_representative,
    build_ttp_input,
    discretize,
    discretize_throughput,
    hm_predict,
    new_network,
    point_mass,
    throughput_only_predict,
    throughput_to_time_distribution,
    time_from_throughput,
    ttp_point_predict,
    ttp_predict,
)


@pytest.mark.parametrize("t, b", [(0.0, 0), (0.3, 1), (10.2, 20), (0.2499, 0), (0.25, 1),
                                  (0.75, 2), (9.7499, 19), (9.75, 20)])
def test_discretize(t, b):
    assert discretize(t) == b


def test_discretize_rejects_negative():
    with pytest.raises(ValueError):
        discretize(-0.1)


def test_bin_table_boundaries():
    edges = [0.0, 0.25] + [0.25 + 0.5 * k for k in range(1, 20)]
    assert BIN_EDGES[:-1].tolist() == edges
    assert BIN_EDGES[-1] == np.inf
    assert NUM_BINS == 21


@pytest.mark.parametrize("b, t", [(0, 0.125), (1, 0.5), (3, 1.5), (20, 10.0)])
def test_bin_representative(b, t):
    assert bin_representative(b) == t


def test_bin_representative_range():
    with pytest.raises(ValueError):
        bin_representative(21)


def test_discretize_inverts_representative():
    assert [discretize(bin_representative(k)) for k in range(NUM_BINS)] == list(range(NUM_BINS))


def test_build_input_cold_start():
    v = build_ttp_input([], TransportStats(), 1e6)
    assert v.tolist() == [0.0] * 21 + [1.0]


def test_build_input_layout():
    hist = [(500_000, 0.7)] * 8
    stats = TransportStats(40, 30, 0.04, 0.05, 1.5e6)
    v = build_ttp_input(hist, stats, 2e6)
    assert len(set(v[:8])) == 1 and len(set(v[8:16])) == 1
    assert v[16:21].tolist() == pytest.approx([0.04, 0.03, 0.04, 0.05, 1.5])
    w = build_ttp_input(hist, stats, 3e6)
    assert np.array_equal(v[:-1], w[:-1]) and v[-1] != w[-1]


def test_partial_history_is_right_aligned():
    inp = TtpInput((1e6, 2e6), (0.5, 1.0), TransportStats(), 1e6)
    v = inp.vector()
    assert v[:8].tolist() == [0] * 6 + [1.0, 2.0]
    assert inp.valid_slots == (False,) * 6 + (True,) * 2


def test_zero_net_predicts_uniform():
    net = nn.Mlp.zeros(nn.MlpSpec(22, (64, 64), 21))
    p = ttp_predict(net, TtpInput(candidate_size=1e6))
    assert np.allclose(p, 1 / 21)
    assert ttp_point_predict(net, TtpInput(candidate_size=1e6)) == 0.125


def test_point_predict_of_one_hot():
    net = nn.Mlp(nn.MlpSpec(22, (), 21), [(np.zeros((22, 21)), np.eye(21)[3] * 50)])
    assert ttp_point_predict(net, TtpInput(candidate_size=1e6)) == 1.5
    shifted = nn.Mlp(net.spec, [(net.params[0][0], net.params[0][1] + 7.0)])
    assert ttp_point_predict(shifted, TtpInput(candidate_size=1e6)) == 1.5


def test_predict_checks_dimensions():
    with pytest.raises(ValueError):
        ttp_predict(nn.Mlp.zeros(nn.MlpSpec(21, (), 21)), TtpInput())


@given(st.lists(st.floats(0, 10), min_size=0, max_size=8), st.floats(1, 5e6))
def test_distribution_sums_to_one(times, size):
    net = new_network("full", seed=1)
    inp = TtpInput(tuple(1e5 * (i + 1) for i in range(len(times))), tuple(times),
                   TransportStats(10, 5, 0.04, 0.05, 1e5), size)
    p = ttp_predict(net, inp)
    assert abs(p.sum() - 1) < 1e-9 and (p >= 0).all()


def test_hm_examples():
    assert hm_predict([1e6] * 5) == pytest.approx(1e6)
    assert hm_predict([1e6, 2e6, 4e6, 4e6, 4e6]) == pytest.approx(5e6 / 2.25)
    assert hm_predict([2e6, 2e6]) == pytest.approx(2e6)
    with pytest.raises(ValueError):
        hm_predict([])


@given(st.lists(st.floats(1e3, 1e8), min_size=1, max_size=5))
def test_hm_at_most_arithmetic_mean(xs):
    assert hm_predict(xs) <= np.mean(xs) * (1 + 1e-12)


def test_throughput_history_keeps_last_five():
    h = ThroughputHistory()
    for r in range(1, 9):
        h = h.pushed(float(r))
    assert h.samples == (4.0, 5.0, 6.0, 7.0, 8.0)
    with pytest.raises(ValueError):
        h.pushed(0.0)


def test_throughput_only_examples():
    assert time_from_throughput(0.5e6, 1e6) == 0.5
    net = new_network("throughput", seed=0)
    feats = np.zeros(21)
    p = throughput_only_predict(net, feats)
    assert p.shape == (21,) and abs(p.sum() - 1) < 1e-12
    # all mass on one rate: half and one second's worth of bytes land in the 0.5 s and 1.0 s bins
    rate = THROUGHPUT_REPRESENTATIVES[10]
    d = throughput_to_time_distribution(np.eye(21)[10], np.array([0.5 * rate, rate]))
    assert np.argmax(d[0]) == discretize(0.5) and np.argmax(d[1]) == discretize(1.0)


def test_throughput_bins_span_fifty_kb_to_fifty_mb():
    assert THROUGHPUT_REPRESENTATIVES[0] == pytest.approx(5e4)
    assert THROUGHPUT_REPRESENTATIVES[-1] == pytest.approx(5e7)
    ratios = THROUGHPUT_REPRESENTATIVES[1:] / THROUGHPUT_REPRESENTATIVES[:-1]
    assert np.allclose(ratios, 10 ** 0.15)
    assert list(discretize_throughput(THROUGHPUT_REPRESENTATIVES)) == list(range(21))
    assert discretize_throughput(1.0) == 0 and discretize_throughput(1e12) == 20


def test_throughput_predictor_ignores_size():
    pred = ThroughputPredictor(new_network("throughput", seed=4))
    stats = TransportStats(10, 5, 0.04, 0.05, 1e5)
    hist = [(3e5, 1.2)] * 4
    a = nn.softmax(nn.forward(pred.net, np.zeros(21)))
    b = nn.softmax(nn.forward(pred.net, np.zeros(21)))
    assert np.array_equal(a, b)
    d = pred.distributions(hist, stats, np.array([[1e5, 2e5]]))
    assert d.shape == (1, 2, 21)
    assert np.allclose(d.sum(-1), 1)


def test_point_predictor_is_one_hot():
    pred = PointTtpPredictor(new_network("full", seed=2))
    d = pred.distributions([], TransportStats(), np.array([[1e5, 2e5, 3e5]]))
    assert ((d == 0) | (d == 1)).all() and (d.sum(-1) == 1).all()
    full = TtpPredictor(pred.net).distributions([], TransportStats(), np.array([[1e5, 2e5, 3e5]]))
    assert np.array_equal(np.argmax(full, -1), np.argmax(d, -1))


def test_point_mass():
    assert point_mass([2]).tolist()[0][2] == 1.0


def test_transport_stats_invariants():
    with pytest.raises(ValueError):
        TransportStats(min_rtt=0.1, srtt=0.05)
    with pytest.raises(ValueError):
        TransportStats(cwnd=-1)


def test_multistep_predictor_uses_step_feature():
    from fugu.predictors import MULTISTEP_INPUT_DIM, TtpPredictor, feature_matrix, new_network

    net = new_network("full", seed=2, hidden=(8,), multistep=True)
    assert net.spec.input_dim == MULTISTEP_INPUT_DIM
    sizes = np.full((3, 2), 250_000.0)
    x = feature_matrix([(1e5, 0.5)], TransportStats(delivery_rate=1e6), sizes, multistep=True)
    assert x.shape == (3, 2, 23) and list(x[:, 0, -1]) == [0.0, 0.2, 0.4]
    d = TtpPredictor(net).distributions([(1e5, 0.5)], TransportStats(), sizes)
    assert d.shape == (3, 2, 21) and not np.allclose(d[0], d[2])
    with pytest.raises(ValueError):
        new_network("throughput", multistep=True)
    with pytest.raises(ValueError):
        feature_matrix([], TransportStats(), [1.0], multistep=True)
