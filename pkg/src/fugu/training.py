"""Training and held-out evaluation of the predictor variants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import nn
from .data import TrainingExample, training_arrays
from .predictors import (
    MULTISTEP_INPUT_DIM,
    NUM_BINS,
    THROUGHPUT_INPUT_DIM,
    VARIANTS,
    new_network,
    point_mass,
    throughput_to_time_distribution,
)

SMOOTHING = 1e-3


def train_variant(examples: Sequence[TrainingExample], variant: str = "full",
                  config: nn.TrainConfig = nn.TrainConfig(), hidden=(64, 64),
                  warm_start: Optional[nn.Mlp] = None) -> tuple[nn.Mlp, nn.TrainReport]:
    """Train the network behind a predictor variant.

    ``point`` shares the full network (it differs only in how the output is
    used), so it trains exactly like ``full``.
    """
    net_variant = "full" if variant == "point" else variant
    x, y, w = training_arrays(examples, net_variant)
    multistep = net_variant != "throughput" and x.shape[1] == MULTISTEP_INPUT_DIM
    net = new_network(net_variant, seed=config.seed, hidden=hidden, multistep=multistep)
    if warm_start is not None and warm_start.spec.widths != net.spec.widths:
        raise ValueError("warm-start model has a different shape")
    trained, report = nn.train(net, (x, y, w), config, warm_start)
    trained.variant = net_variant
    return trained, report


def time_distributions(net: nn.Mlp, variant: str, examples: Sequence[TrainingExample]) -> np.ndarray:
    """Predicted transmission-time distributions, one row per example."""
    x, _, _ = training_arrays(examples, "full")
    if variant == "throughput":
        rate_probs = nn.predict_proba(net, x[:, :THROUGHPUT_INPUT_DIM])
        return throughput_to_time_distribution(rate_probs, x[:, THROUGHPUT_INPUT_DIM] * 1e6)
    probs = nn.predict_proba(net, x)
    if variant == "point":
        return point_mass(np.argmax(probs, axis=1))
    return probs


def held_out_cross_entropy(net: nn.Mlp, variant: str, examples: Sequence[TrainingExample],
                           smoothing: float = SMOOTHING) -> float:
    """Mean ``-ln p(true bin)`` after mixing ``smoothing`` of a uniform distribution in.

    The mixing keeps point and pushed-forward distributions (which put zero
    mass on most bins) comparable with the softmax variants.
    """
    probs = time_distributions(net, variant, examples)
    probs = (1 - smoothing) * probs + smoothing / NUM_BINS
    y = np.array([e.target_bin for e in examples])
    return float(-np.mean(np.log(probs[np.arange(len(y)), y])))


def bin_accuracy(net: nn.Mlp, variant: str, examples: Sequence[TrainingExample]) -> float:
    probs = time_distributions(net, variant, examples)
    y = np.array([e.target_bin for e in examples])
    return float(np.mean(np.argmax(probs, axis=1) == y))


def split_examples(examples: Sequence[TrainingExample], held_out_fraction: float, seed: int):
    """Split by stream so held-out chunks never share a session with training chunks."""
    streams = [e.stream_id for e in examples]
    unique = sorted(set(streams))
    rng = np.random.default_rng(seed)
    held = set(rng.choice(unique, size=max(1, int(round(len(unique) * held_out_fraction))),
                          replace=False).tolist())
    train = [e for e, s in zip(examples, streams) if s not in held]
    test = [e for e, s in zip(examples, streams) if s in held]
    return train, test


@dataclass(frozen=True)
class AblationRow:
    variant: str
    cross_entropy: float
    accuracy: float
    train_loss: float


def run_ablation(train: Sequence[TrainingExample], test: Sequence[TrainingExample],
                 config: nn.TrainConfig = nn.TrainConfig(), hidden=(64, 64),
                 variants: Sequence[str] = VARIANTS) -> list[AblationRow]:
    rows = []
    trained: dict[str, tuple[nn.Mlp, nn.TrainReport]] = {}
    for variant in variants:
        key = "full" if variant == "point" else variant
        if key not in trained:
            trained[key] = train_variant(train, key, config, hidden)
        net, report = trained[key]
        rows.append(AblationRow(variant, held_out_cross_entropy(net, variant, test),
                                bin_accuracy(net, variant, test), report.final_loss))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'variant':<12} {'held_out_ce':>12} {'accuracy':>9} {'train_loss':>11}"]
    for r in rows:
        lines.append(f"{r.variant:<12} {r.cross_entropy:>12.4f} {r.accuracy:>9.4f} "
                     f"{r.train_loss:>11.4f}")
    return "\n".join(lines) + "\n"
