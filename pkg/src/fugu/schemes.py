"""Per-session ABR scheme objects that wrap the pure planners with the
little state each one carries between chunks (throughput samples, recent
prediction errors)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import control
from .control import Horizon
from .domain import Chunk, PlaybackState, QoeWeights
from .nn import Mlp
from .predictors import ThroughputHistory, TransportStats, hm_predict, predictor_for

SCHEMES = (
    "bba",
    "mpc_hm",
    "robust_mpc_hm",
    "fugu",
    "fugu_point",
    "fugu_linear",
    "fugu_throughput",
)
# named in reports only; no in-process implementation
EXTERNAL_SCHEMES = ("pensieve",)

MODEL_FOR_SCHEME = {
    "fugu": "full",
    "fugu_point": "full",
    "fugu_linear": "linear",
    "fugu_throughput": "throughput",
}


@dataclass
class DecisionContext:
    upcoming: Sequence[Chunk]
    state: PlaybackState
    history: Sequence[tuple[float, float]]
    stats: TransportStats


class Scheme:
    name = "scheme"

    def choose(self, ctx: DecisionContext) -> int:
        raise NotImplementedError

    def observe(self, size: float, transmission_time: float) -> None:
        pass


class Bba(Scheme):
    name = "bba"

    def __init__(self, reservoir=control.BBA_RESERVOIR, cushion_top=control.BBA_CUSHION_TOP):
        self.reservoir = reservoir
        self.cushion_top = cushion_top

    def choose(self, ctx):
        return control.bba_select(ctx.upcoming[0], ctx.state, self.reservoir, self.cushion_top)


class MpcHm(Scheme):
    name = "mpc_hm"

    def __init__(self, weights: QoeWeights, horizon: Horizon):
        self.weights = weights
        self.horizon = horizon
        self.samples = ThroughputHistory()

    def choose(self, ctx):
        return control.mpc_hm_plan(ctx.upcoming, ctx.state, self.samples, self.weights,
                                   self.horizon, ctx.stats).version

    def observe(self, size, transmission_time):
        self.samples = self.samples.pushed(size / transmission_time)


class RobustMpcHm(MpcHm):
    name = "robust_mpc_hm"

    def __init__(self, weights, horizon):
        super().__init__(weights, horizon)
        self.errors: list[float] = []

    def choose(self, ctx):
        return control.robust_mpc_hm_plan(ctx.upcoming, ctx.state, self.samples, self.errors,
                                          self.weights, self.horizon, ctx.stats).version

    def observe(self, size, transmission_time):
        actual = size / transmission_time
        if len(self.samples):
            self.errors.append(control.relative_error(hm_predict(self.samples), actual))
            self.errors = self.errors[-control.ROBUST_ERROR_WINDOW:]
        super().observe(size, transmission_time)


class Fugu(Scheme):
    """Stochastic MPC over the distributions of a learned predictor."""

    def __init__(self, predictor, weights: QoeWeights, horizon: Horizon, name="fugu"):
        self.predictor = predictor
        self.weights = weights
        self.horizon = horizon
        self.name = name

    def choose(self, ctx):
        planned = list(ctx.upcoming)[:self.horizon.steps]
        sizes = np.array([c.sizes for c in planned], dtype=float)
        dists = self.predictor.distributions(ctx.history, ctx.stats, sizes)
        return control.mpc_plan(planned, ctx.state, dists, self.weights, self.horizon).version


def make_scheme(name: str, weights: QoeWeights = QoeWeights(), horizon: Horizon = Horizon(),
                models: Optional[dict[str, Mlp]] = None) -> Scheme:
    """Fresh scheme instance for one session.

    ``models`` maps predictor variants (``full``, ``linear``, ``throughput``)
    to trained networks for the learned schemes.
    """
    if name in EXTERNAL_SCHEMES:
        raise ValueError(f"scheme {name!r} is an external placeholder and cannot be simulated")
    if name == "bba":
        return Bba()
    if name == "mpc_hm":
        return MpcHm(weights, horizon)
    if name == "robust_mpc_hm":
        return RobustMpcHm(weights, horizon)
    if name in MODEL_FOR_SCHEME:
        variant = MODEL_FOR_SCHEME[name]
        net = (models or {}).get(variant)
        if net is None:
            raise ValueError(f"scheme {name!r} needs a trained '{variant}' model")
        use = "point" if name == "fugu_point" else variant
        return Fugu(predictor_for(net, use), weights, horizon, name)
    raise ValueError(f"unknown scheme {name!r}")


def required_models(schemes: Sequence[str]) -> set[str]:
    return {MODEL_FOR_SCHEME[s] for s in schemes if s in MODEL_FOR_SCHEME}
