"""ABR decision rules: stochastic MPC by dynamic programming, its HM and
Robust-HM front ends, buffer-based BBA, and an exhaustive planning oracle.

All planners are pure functions of their arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .domain import Chunk, PlaybackState, QoeWeights, chunk_qoe
from .predictors import (
    BIN_REPRESENTATIVES,
    NUM_BINS,
    ThroughputHistory,
    TransportStats,
    discretize_many,
    hm_predict,
    point_mass,
)

BBA_RESERVOIR = 3.0
BBA_CUSHION_TOP = 13.5
ROBUST_ERROR_WINDOW = 5


@dataclass(frozen=True)
class Horizon:
    steps: int = 5
    buffer_step: float = 0.25

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("horizon must have at least one step")
        if self.buffer_step <= 0:
            raise ValueError("buffer_step must be positive")

    def levels(self, max_buffer: float) -> int:
        n = max_buffer / self.buffer_step
        if abs(n - round(n)) > 1e-9:
            raise ValueError(
                f"buffer_step {self.buffer_step} does not divide max_buffer {max_buffer}"
            )
        return int(round(n)) + 1


@dataclass(frozen=True)
class PlanResult:
    version: int
    expected_qoe: float
    fallback: bool = False


def _planning_arrays(upcoming: Sequence[Chunk], dists, steps: int):
    chunks = list(upcoming)[:steps]
    if not chunks:
        raise ValueError("nothing to plan: no upcoming chunks")
    counts = {len(c.versions) for c in chunks}
    if len(counts) != 1:
        raise ValueError("all planned chunks must offer the same number of versions")
    probs = np.asarray(dists, dtype=float)
    h = len(chunks)
    if probs.ndim != 3 or probs.shape[0] < h or probs.shape[1:] != (counts.pop(), NUM_BINS):
        raise ValueError(f"distribution array has shape {probs.shape}")
    probs = probs[:h]
    quality = np.array([c.qualities for c in chunks])
    duration = np.array([c.duration for c in chunks])
    return chunks, probs, quality, duration


def _valid_distributions(probs: np.ndarray) -> bool:
    return bool(
        np.all(np.isfinite(probs))
        and np.all(probs >= 0)
        and np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
    )


def mpc_plan(upcoming: Sequence[Chunk], state: PlaybackState, dists,
             weights: QoeWeights = QoeWeights(), horizon: Horizon = Horizon()) -> PlanResult:
    """First action of a plan maximising expected summed QoE over the horizon.

    ``dists[j, a]`` is the probability over the 21 time bins of sending
    version ``a`` of ``upcoming[j]``. The start buffer is used exactly; later
    buffer levels are rounded to the ``horizon.buffer_step`` grid. Only grid
    levels reachable from the start state (through bins with non-zero mass)
    are evaluated. Invalid distributions fall back to the smallest version.
    """
    chunks, probs, quality, duration = _planning_arrays(upcoming, dists, horizon.steps)
    if not _valid_distributions(probs):
        return PlanResult(0, float("nan"), fallback=True)

    h, n_versions, _ = probs.shape
    step = horizon.buffer_step
    max_buffer = weights.max_buffer
    levels = horizon.levels(max_buffer)
    grid = np.arange(levels) * step
    t_rep = BIN_REPRESENTATIVES

    active = [np.flatnonzero(probs[j].sum(axis=0) > 0) for j in range(h)]

    def next_index(buffers: np.ndarray, j: int) -> np.ndarray:
        t = t_rep[active[j]]
        nb = np.minimum(np.maximum(buffers[:, None] - t[None, :], 0.0) + duration[j], max_buffer)
        return np.rint(nb / step).astype(int)

    # forward pass: grid levels reachable at each step >= 1
    reach: list[Optional[np.ndarray]] = [None] * h
    frontier = np.array([state.buffer])
    for j in range(h - 1):
        reach[j + 1] = np.unique(next_index(frontier, j))
        frontier = grid[reach[j + 1]]

    # backward pass over reachable states only; value[level, prev_version]
    future = np.zeros((levels, n_versions))
    for j in range(h - 1, 0, -1):
        idx = reach[j]
        b = grid[idx]
        cont = _continuation(b, j, active[j], probs, future, next_index, weights.mu)
        penalty = quality[j][None, :] - weights.lam * np.abs(
            quality[j][None, :] - quality[j - 1][:, None]
        )
        value = np.full((levels, n_versions), np.nan)
        value[idx] = np.max(penalty[None, :, :] + cont[:, None, :], axis=2)
        future = value

    root = _continuation(np.array([state.buffer]), 0, active[0], probs, future,
                         next_index, weights.mu)[0]
    q0 = quality[0]
    if state.last_quality is None:
        totals = q0 + root
    else:
        totals = q0 - weights.lam * np.abs(q0 - state.last_quality) + root
    best = int(np.argmax(totals))
    return PlanResult(best, float(totals[best]))


def _continuation(b, j, act, probs, future, next_index, mu) -> np.ndarray:
    """Expected (stall penalty + value-to-go) for each buffer in ``b`` and each action."""
    t = BIN_REPRESENTATIVES[act]
    stall = np.maximum(t[None, :] - b[:, None], 0.0)
    nidx = next_index(b, j)
    to_go = future[nidx]  # (buffers, bins, next prev_version == action)
    outcome = -mu * stall[:, :, None] + to_go
    return np.einsum("rka,ak->ra", outcome, probs[j][:, act])


BRUTE_FORCE_MAX_STEPS = 4
BRUTE_FORCE_MAX_VERSIONS = 4
BRUTE_FORCE_MAX_BINS = 4


def brute_force_action_values(upcoming: Sequence[Chunk], state: PlaybackState, dists,
                              weights: QoeWeights = QoeWeights(),
                              horizon: Horizon = Horizon()) -> np.ndarray:
    """Exhaustive expectimax value of each first action.

    Buffers are carried exactly (no grid), so this is the reference the DP
    is checked against. Later actions may depend on earlier outcomes, as in
    the DP.
    """
    chunks, probs, quality, duration = _planning_arrays(upcoming, dists, horizon.steps)
    h, n_versions, _ = probs.shape
    support = [[np.flatnonzero(probs[j, a] > 0) for a in range(n_versions)] for j in range(h)]
    if (h > BRUTE_FORCE_MAX_STEPS or n_versions > BRUTE_FORCE_MAX_VERSIONS
            or max(len(s) for row in support for s in row) > BRUTE_FORCE_MAX_BINS):
        raise ValueError("instance too large for exhaustive planning")

    def action_value(j: int, a: int, buffer: float, prev_q) -> float:
        version = chunks[j].versions[a]
        total = 0.0
        for k in support[j][a]:
            t = float(BIN_REPRESENTATIVES[k])
            reward = chunk_qoe(version, prev_q, t, buffer, weights)
            nb = min(max(buffer - t, 0.0) + duration[j], weights.max_buffer)
            total += probs[j, a, k] * (reward + value(j + 1, nb, version.quality))
        return total

    def value(j: int, buffer: float, prev_q) -> float:
        if j == h:
            return 0.0
        return max(action_value(j, a, buffer, prev_q) for a in range(n_versions))

    return np.array([action_value(0, a, state.buffer, state.last_quality)
                     for a in range(n_versions)])


def brute_force_plan(upcoming: Sequence[Chunk], state: PlaybackState, dists,
                     weights: QoeWeights = QoeWeights(),
                     horizon: Horizon = Horizon()) -> PlanResult:
    """Best first action by exhaustive expectimax; ties go to the lowest index."""
    values = brute_force_action_values(upcoming, state, dists, weights, horizon)
    a = int(np.argmax(values))
    return PlanResult(a, float(values[a]))


def deterministic_distributions(upcoming: Sequence[Chunk], rate: float, steps: int) -> np.ndarray:
    """All mass on the bin of ``size / rate`` for every planned (chunk, version)."""
    sizes = np.array([c.sizes for c in list(upcoming)[:steps]], dtype=float)
    return point_mass(discretize_many(sizes / rate))


def _lowest(upcoming) -> PlanResult:
    return PlanResult(0, float("nan"), fallback=True)


def _cold_start_rate(history: ThroughputHistory, stats: Optional[TransportStats]) -> Optional[float]:
    if len(history):
        return hm_predict(history)
    if stats is not None and stats.delivery_rate > 0:
        return stats.delivery_rate
    return None


def mpc_hm_plan(upcoming: Sequence[Chunk], state: PlaybackState, history: ThroughputHistory,
                weights: QoeWeights = QoeWeights(), horizon: Horizon = Horizon(),
                stats: Optional[TransportStats] = None) -> PlanResult:
    """MPC driven by the harmonic mean of the last five throughput samples.

    With no samples yet, the transport delivery rate stands in; failing
    that, the smallest version is sent.
    """
    rate = _cold_start_rate(history, stats)
    if rate is None:
        return _lowest(upcoming)
    dists = deterministic_distributions(upcoming, rate, horizon.steps)
    return mpc_plan(upcoming, state, dists, weights, horizon)


def robust_rate(rate: float, errors: Sequence[float]) -> float:
    """Deflate a throughput prediction by the worst recent relative error."""
    recent = list(errors)[-ROBUST_ERROR_WINDOW:]
    if any(e < 0 for e in recent):
        raise ValueError("prediction errors must be non-negative")
    return rate / (1.0 + max(recent, default=0.0))


def relative_error(predicted: float, actual: float) -> float:
    return abs(predicted - actual) / actual


def robust_mpc_hm_plan(upcoming: Sequence[Chunk], state: PlaybackState,
                       history: ThroughputHistory, errors: Sequence[float],
                       weights: QoeWeights = QoeWeights(), horizon: Horizon = Horizon(),
                       stats: Optional[TransportStats] = None) -> PlanResult:
    rate = _cold_start_rate(history, stats)
    if rate is None:
        return _lowest(upcoming)
    dists = deterministic_distributions(upcoming, robust_rate(rate, errors), horizon.steps)
    return mpc_plan(upcoming, state, dists, weights, horizon)


def bba_budget(chunk: Chunk, buffer: float, reservoir: float, cushion_top: float) -> float:
    lo, hi = chunk.versions[0].size, chunk.versions[-1].size
    if buffer <= reservoir:
        return float(lo)
    if buffer >= cushion_top:
        return float(hi)
    return lo + (hi - lo) * (buffer - reservoir) / (cushion_top - reservoir)


def bba_select(chunk: Chunk, state: PlaybackState, reservoir: float = BBA_RESERVOIR,
               cushion_top: float = BBA_CUSHION_TOP) -> int:
    """Highest-SSIM version whose size fits the buffer-mapped budget."""
    if not reservoir < cushion_top:
        raise ValueError("reservoir must be below cushion_top")
    budget = bba_budget(chunk, state.buffer, reservoir, cushion_top)
    best = 0
    for i, v in enumerate(chunk.versions):
        if v.size <= budget and v.quality > chunk.versions[best].quality:
            best = i
    return best
