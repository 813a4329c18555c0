"""Transmission-time predictors: the TTP network and the alternatives it is
compared against (harmonic-mean throughput, point estimate, throughput-only,
linear).

Every predictor used by the planner exposes ``distributions(history, stats,
sizes)`` returning an array of shape ``sizes.shape + (21,)`` over the
transmission-time bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn

NUM_BINS = 21
HISTORY_LEN = 8
NUM_STATS = 5
TTP_INPUT_DIM = 2 * HISTORY_LEN + NUM_STATS + 1
THROUGHPUT_INPUT_DIM = TTP_INPUT_DIM - 1
MULTISTEP_INPUT_DIM = TTP_INPUT_DIM + 1
STEP_SCALE = 5  # the step feature is step / STEP_SCALE (the default horizon)
HM_WINDOW = 5
PACKET_BYTES = 1500

# [0, 0.25), [0.25, 0.75), ..., [9.25, 9.75), [9.75, inf)
BIN_EDGES = np.array([0.0] + [0.25 + 0.5 * k for k in range(NUM_BINS - 1)] + [math.inf])
BIN_REPRESENTATIVES = np.array([0.125] + [0.5 * k for k in range(1, NUM_BINS)])

# Throughput bins (bytes/s) for the size-blind ablation: geometric from 0.05 to 50 MB/s,
# a factor 10**0.15 apart; edges are geometric midpoints.
THROUGHPUT_REPRESENTATIVES = np.geomspace(5e4, 5e7, NUM_BINS)
THROUGHPUT_EDGES = np.concatenate(
    [[0.0], np.sqrt(THROUGHPUT_REPRESENTATIVES[:-1] * THROUGHPUT_REPRESENTATIVES[1:]), [math.inf]]
)


def discretize(t: float) -> int:
    """Transmission-time bin index of ``t`` seconds."""
    if not t >= 0:
        raise ValueError(f"transmission time must be non-negative, got {t!r}")
    return int(np.searchsorted(BIN_EDGES, t, side="right") - 1)


def discretize_many(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise ValueError("transmission times must be non-negative")
    return np.searchsorted(BIN_EDGES, t, side="right") - 1


def bin_representative(index: int) -> float:
    if not (0 <= index < NUM_BINS) or int(index) != index:
        raise ValueError(f"bin index {index!r} outside 0..{NUM_BINS - 1}")
    return float(BIN_REPRESENTATIVES[int(index)])


def discretize_throughput(rate) -> np.ndarray:
    rate = np.asarray(rate, dtype=float)
    return np.searchsorted(THROUGHPUT_EDGES, rate, side="right") - 1


@dataclass(frozen=True)
class TransportStats:
    """Transport-layer observables at send time (cwnd/in_flight in packets)."""

    cwnd: float = 0.0
    in_flight: float = 0.0
    min_rtt: float = 0.0
    srtt: float = 0.0
    delivery_rate: float = 0.0

    def __post_init__(self):
        if min(self.cwnd, self.in_flight, self.min_rtt, self.srtt, self.delivery_rate) < 0:
            raise ValueError("transport statistics must be non-negative")
        if self.min_rtt > 0 and self.srtt > 0 and self.min_rtt > self.srtt:
            raise ValueError("min_rtt exceeds srtt")

    def features(self) -> list[float]:
        return [
            self.cwnd / 1000.0,
            self.in_flight / 1000.0,
            self.min_rtt,
            self.srtt,
            self.delivery_rate * 1e-6,
        ]


@dataclass(frozen=True)
class TtpInput:
    """Raw predictor input. History runs oldest to newest, at most 8 entries."""

    past_sizes: tuple[float, ...] = ()
    past_times: tuple[float, ...] = ()
    stats: TransportStats = TransportStats()
    candidate_size: float = 0.0
    step: Optional[int] = None

    def __post_init__(self):
        if self.step is not None and self.step < 0:
            raise ValueError("horizon step must be non-negative")
        if len(self.past_sizes) != len(self.past_times):
            raise ValueError("past_sizes and past_times differ in length")
        if len(self.past_sizes) > HISTORY_LEN:
            raise ValueError(f"history longer than {HISTORY_LEN}")

    @property
    def valid_slots(self) -> tuple[bool, ...]:
        """Per-slot validity; missing (zero-filled) slots come first."""
        n = len(self.past_sizes)
        return (False,) * (HISTORY_LEN - n) + (True,) * n

    def vector(self) -> np.ndarray:
        """22 coordinates, or 23 when ``step`` is set (multi-step configuration)."""
        v = build_ttp_input(list(zip(self.past_sizes, self.past_times)), self.stats,
                            self.candidate_size)
        if self.step is None:
            return v
        return np.append(v, self.step / STEP_SCALE)


def history_features(history: Sequence[tuple[float, float]], stats: TransportStats) -> np.ndarray:
    """The 21 size-independent coordinates (history + transport statistics)."""
    history = list(history)[-HISTORY_LEN:]
    pad = HISTORY_LEN - len(history)
    sizes = [0.0] * pad + [s * 1e-6 for s, _ in history]
    times = [0.0] * pad + [float(t) for _, t in history]
    return np.array(sizes + times + stats.features(), dtype=float)


def build_ttp_input(history: Sequence[tuple[float, float]], stats: TransportStats,
                    candidate_size: float) -> np.ndarray:
    """Normalised 22-vector: 8 sizes (MB), 8 times (s), 5 stats, candidate size (MB).

    ``history`` holds ``(size_bytes, transmission_time)`` pairs, oldest first;
    missing slots at the front are zero.
    """
    if len(history) > HISTORY_LEN:
        raise ValueError(f"history longer than {HISTORY_LEN}")
    return np.append(history_features(history, stats), candidate_size * 1e-6)


def feature_matrix(history, stats: TransportStats, sizes, multistep: bool = False) -> np.ndarray:
    """TTP inputs for many candidate sizes sharing one history: shape ``sizes.shape + (22,)``.

    With ``multistep`` the sizes are ``(steps, versions)`` and a 23rd column
    holds each row's horizon step.
    """
    sizes = np.asarray(sizes, dtype=float)
    base = history_features(history, stats)
    if multistep:
        if sizes.ndim != 2:
            raise ValueError("multi-step inputs need a (steps, versions) size array")
        out = np.empty(sizes.shape + (MULTISTEP_INPUT_DIM,))
        out[..., -1] = (np.arange(sizes.shape[0]) / STEP_SCALE)[:, None]
    else:
        out = np.empty(sizes.shape + (TTP_INPUT_DIM,))
    out[..., :THROUGHPUT_INPUT_DIM] = base
    out[..., THROUGHPUT_INPUT_DIM] = sizes * 1e-6
    return out


def _check_net(net: nn.Mlp, input_dim) -> None:
    dims = (input_dim,) if isinstance(input_dim, int) else tuple(input_dim)
    if net.spec.input_dim not in dims or net.spec.output_dim != NUM_BINS:
        raise ValueError(
            f"predictor network must map {' or '.join(map(str, dims))} -> {NUM_BINS}, "
            f"got {net.spec.input_dim} -> {net.spec.output_dim}"
        )


def ttp_predict(net: nn.Mlp, inp: TtpInput) -> np.ndarray:
    """Probability over the 21 transmission-time bins."""
    x = inp.vector()
    _check_net(net, len(x))
    return nn.softmax(nn.forward(net, x))


def ttp_point_predict(net: nn.Mlp, inp: TtpInput) -> float:
    """Representative time of the most likely bin (lowest bin on ties)."""
    return bin_representative(int(np.argmax(ttp_predict(net, inp))))


def point_mass(bins) -> np.ndarray:
    bins = np.asarray(bins, dtype=int)
    out = np.zeros(bins.shape + (NUM_BINS,))
    np.put_along_axis(out, bins[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True)
class ThroughputHistory:
    """Last five per-chunk throughput samples (bytes/s), oldest first."""

    samples: tuple[float, ...] = ()

    def pushed(self, rate: float) -> "ThroughputHistory":
        if not rate > 0:
            raise ValueError("throughput samples must be positive")
        return ThroughputHistory((self.samples + (float(rate),))[-HM_WINDOW:])

    def __len__(self):
        return len(self.samples)


def hm_predict(history) -> float:
    """Harmonic mean of the (up to five) most recent throughput samples."""
    samples = history.samples if isinstance(history, ThroughputHistory) else tuple(history)
    samples = samples[-HM_WINDOW:]
    if not samples:
        raise ValueError("harmonic mean of an empty throughput history")
    if any(not s > 0 for s in samples):
        raise ValueError("throughput samples must be positive")
    return len(samples) / sum(1.0 / s for s in samples)


def throughput_only_predict(net: nn.Mlp, features) -> np.ndarray:
    """Distribution over throughput bins from the 21 size-blind features."""
    _check_net(net, THROUGHPUT_INPUT_DIM)
    return nn.softmax(nn.forward(net, features))


def time_from_throughput(size: float, rate: float) -> float:
    return size / rate


def throughput_to_time_distribution(rate_probs, sizes) -> np.ndarray:
    """Push a throughput distribution through ``t = size / rate`` onto the time bins.

    ``rate_probs`` has a trailing axis of 21 throughput bins and broadcasts
    against ``sizes``.
    """
    sizes = np.asarray(sizes, dtype=float)
    rate_probs = np.asarray(rate_probs, dtype=float)
    times = sizes[..., None] / THROUGHPUT_REPRESENTATIVES
    bins = np.searchsorted(BIN_EDGES, times, side="right") - 1
    shape = np.broadcast_shapes(rate_probs.shape, bins.shape)
    out = np.zeros(shape[:-1] + (NUM_BINS,))
    rate_probs = np.broadcast_to(rate_probs, shape)
    bins = np.broadcast_to(bins, shape)
    for k in range(NUM_BINS):
        out += rate_probs[..., k, None] * (bins[..., k, None] == np.arange(NUM_BINS))
    return out


# -- predictor objects consumed by the planner ---------------------------------

@dataclass
class TtpPredictor:
    """Full probabilistic TTP (also used for the linear ablation, whose net has no hidden layers)."""

    net: nn.Mlp

    def __post_init__(self):
        _check_net(self.net, (TTP_INPUT_DIM, MULTISTEP_INPUT_DIM))

    def distributions(self, history, stats: TransportStats, sizes) -> np.ndarray:
        x = feature_matrix(history, stats, sizes, is_multistep(self.net))
        return nn.softmax(nn.forward(self.net, x))


@dataclass
class PointTtpPredictor:
    """Non-probabilistic use of a TTP: all mass on the most likely bin."""

    net: nn.Mlp

    def __post_init__(self):
        _check_net(self.net, (TTP_INPUT_DIM, MULTISTEP_INPUT_DIM))

    def distributions(self, history, stats: TransportStats, sizes) -> np.ndarray:
        x = feature_matrix(history, stats, sizes, is_multistep(self.net))
        logits = nn.forward(self.net, x)
        return point_mass(np.argmax(logits, axis=-1))


@dataclass
class ThroughputPredictor:
    """Size-blind ablation: predict throughput, divide each candidate size by it."""

    net: nn.Mlp

    def __post_init__(self):
        _check_net(self.net, THROUGHPUT_INPUT_DIM)

    def distributions(self, history, stats: TransportStats, sizes) -> np.ndarray:
        rate_probs = throughput_only_predict(self.net, history_features(history, stats))
        return throughput_to_time_distribution(rate_probs, sizes)


VARIANTS = ("full", "point", "throughput", "linear")


def predictor_for(net: nn.Mlp, variant: str | None = None):
    variant = variant or net.variant
    if variant in ("full", "linear"):
        return TtpPredictor(net)
    if variant == "point":
        return PointTtpPredictor(net)
    if variant == "throughput":
        return ThroughputPredictor(net)
    raise ValueError(f"unknown predictor variant {variant!r}")


def is_multistep(net: nn.Mlp) -> bool:
    return net.spec.input_dim == MULTISTEP_INPUT_DIM


def new_network(variant: str, seed: int = 0, hidden=(64, 64), multistep: bool = False) -> nn.Mlp:
    """Untrained network for a predictor variant."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown predictor variant {variant!r}")
    if variant == "throughput":
        if multistep:
            raise ValueError("the throughput variant has no multi-step form")
        input_dim = THROUGHPUT_INPUT_DIM
    else:
        input_dim = MULTISTEP_INPUT_DIM if multistep else TTP_INPUT_DIM
    hidden_layers = () if variant == "linear" else tuple(hidden)
    return nn.Mlp.init(nn.MlpSpec(input_dim, hidden_layers, NUM_BINS, seed), variant=variant)
