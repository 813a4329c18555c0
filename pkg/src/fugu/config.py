"""Experiment configuration: an INI file with one section per concern.

Example::

    [experiment]
    schemes = mpc_hm, bba
    sessions = 50
    seed = 1
    traces = traces
    video = video.txt
    out = runs/day0
    day = 0

    [qoe]
    lambda = 1
    mu = 100
    max_buffer = 15

    [horizon]
    steps = 5
    buffer_step = 0.25

    [training]
    learning_rate = 0.01
    batch_size = 64
    epochs = 50
    hidden = 64, 64
    window_days = 14
    decay = 0.9
    multistep = no

Relative paths are resolved against the config file's directory. Command-line
flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .control import Horizon
from .data import RECENCY_DECAY, WINDOW_DAYS
from .domain import QoeWeights
from .nn import TrainConfig
from .simulator import WATCH_MEDIAN, WATCH_SIGMA


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    schemes: list[str] = field(default_factory=lambda: ["mpc_hm"])
    traces: Optional[Path] = None
    video: Optional[Path] = None
    sessions: int = 10
    seed: int = 0
    out: Path = Path("out")
    day: int = 0
    watch_median: float = WATCH_MEDIAN
    watch_sigma: float = WATCH_SIGMA
    weights: QoeWeights = field(default_factory=QoeWeights)
    horizon: Horizon = field(default_factory=Horizon)
    training: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple[int, ...] = (64, 64)
    window_days: int = WINDOW_DAYS
    decay: float = RECENCY_DECAY
    multistep: bool = False

    def check(self) -> None:
        if not self.schemes:
            raise ConfigError("no schemes configured")
        if self.sessions <= 0:
            raise ConfigError("sessions must be positive")
        for label, path in (("trace directory", self.traces), ("video spec", self.video)):
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} not found: {path}")


def _list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def load_config(path=None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def resolve(value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else base / p

    try:
        if parser.has_section("experiment"):
            e = parser["experiment"]
            if "schemes" in e:
                cfg.schemes = _list(e["schemes"])
            if "traces" in e:
                cfg.traces = resolve(e["traces"])
            if "video" in e:
                cfg.video = resolve(e["video"])
            if "out" in e:
                cfg.out = resolve(e["out"])
            cfg.sessions = e.getint("sessions", cfg.sessions)
            cfg.seed = e.getint("seed", cfg.seed)
            cfg.day = e.getint("day", cfg.day)
            cfg.watch_median = e.getfloat("watch_median", cfg.watch_median)
            cfg.watch_sigma = e.getfloat("watch_sigma", cfg.watch_sigma)
        if parser.has_section("qoe"):
            q = parser["qoe"]
            cfg.weights = QoeWeights(q.getfloat("lambda", cfg.weights.lam),
                                     q.getfloat("mu", cfg.weights.mu),
                                     q.getfloat("max_buffer", cfg.weights.max_buffer))
        if parser.has_section("horizon"):
            h = parser["horizon"]
            cfg.horizon = Horizon(h.getint("steps", cfg.horizon.steps),
                                  h.getfloat("buffer_step", cfg.horizon.buffer_step))
        if parser.has_section("training"):
            t = parser["training"]
            cfg.training = TrainConfig(t.getfloat("learning_rate", cfg.training.learning_rate),
                                       t.getint("batch_size", cfg.training.batch_size),
                                       t.getint("epochs", cfg.training.epochs),
                                       t.getint("seed", cfg.training.seed))
            if "hidden" in t:
                cfg.hidden = tuple(int(v) for v in _list(t["hidden"]))
            cfg.window_days = t.getint("window_days", cfg.window_days)
            cfg.decay = t.getfloat("decay", cfg.decay)
            cfg.multistep = t.getboolean("multistep", cfg.multistep)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg.horizon.levels(cfg.weights.max_buffer)
    return cfg


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
