"""Core value types and per-chunk QoE / buffer arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

DEFAULT_CHUNK_DURATION = 2.002
SSIM_DB_CEILING = 60.0
_LOSSLESS_EPS = 1e-6


def ssim_to_db(ssim_index: float) -> float:
    """Convert an SSIM index in [0, 1] to dB, ``-10 log10(1 - s)``.

    Indices within 1e-6 of 1 are treated as lossless and clamped to 60 dB.
    """
    if not (0.0 <= ssim_index <= 1.0):
        raise ValueError(f"SSIM index must lie in [0, 1], got {ssim_index!r}")
    if ssim_index >= 1.0 - _LOSSLESS_EPS:
        return SSIM_DB_CEILING
    return -10.0 * math.log1p(-ssim_index) / math.log(10.0) + 0.0


def db_to_ssim(ssim_db: float) -> float:
    """Inverse of :func:`ssim_to_db` (below the clamp)."""
    if ssim_db < 0:
        raise ValueError(f"SSIM dB must be non-negative, got {ssim_db!r}")
    return 1.0 - 10.0 ** (-ssim_db / 10.0)


@dataclass(frozen=True)
class ChunkVersion:
    """One encoded version of a chunk.

    ``quality`` is SSIM in dB; ``size`` in bytes.
    """

    size: int
    quality: float
    duration: float = DEFAULT_CHUNK_DURATION

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"chunk size must be positive, got {self.size}")
        if self.duration <= 0:
            raise ValueError(f"chunk duration must be positive, got {self.duration}")
        if not math.isfinite(self.quality):
            raise ValueError("chunk quality must be finite")
        if self.quality > SSIM_DB_CEILING:
            object.__setattr__(self, "quality", SSIM_DB_CEILING)


@dataclass(frozen=True)
class Chunk:
    index: int
    versions: tuple[ChunkVersion, ...]

    def __post_init__(self):
        versions = tuple(self.versions)
        object.__setattr__(self, "versions", versions)
        if not versions:
            raise ValueError(f"chunk {self.index} has no versions")
        for a, b in zip(versions, versions[1:]):
            if b.size <= a.size:
                raise ValueError(
                    f"chunk {self.index}: version sizes must be strictly increasing"
                )

    @property
    def duration(self) -> float:
        return self.versions[0].duration

    @property
    def sizes(self) -> list[int]:
        return [v.size for v in self.versions]

    @property
    def qualities(self) -> list[float]:
        return [v.quality for v in self.versions]


@dataclass(frozen=True)
class QoeWeights:
    """Objective weights: ``lam`` on quality variation, ``mu`` per stalled second."""

    lam: float = 1.0
    mu: float = 100.0
    max_buffer: float = 15.0

    def __post_init__(self):
        if self.lam < 0 or self.mu < 0:
            raise ValueError("QoE weights must be non-negative")
        if self.max_buffer <= 0:
            raise ValueError("max_buffer must be positive")


@dataclass(frozen=True)
class PlaybackState:
    """Client state seen by the planner at a decision point.

    ``last_quality`` is None before the first chunk, in which case no
    variation penalty applies to the first decision.
    """

    buffer: float = 0.0
    last_quality: Optional[float] = None
    playing: bool = False
    cumulative_stall: float = 0.0
    max_buffer: float = field(default=15.0, repr=False)

    def __post_init__(self):
        if not (0.0 <= self.buffer <= self.max_buffer):
            raise ValueError(
                f"buffer {self.buffer} outside [0, {self.max_buffer}]"
            )
        if self.cumulative_stall < 0:
            raise ValueError("cumulative_stall must be non-negative")

    def advanced(self, transmission_time: float, version: ChunkVersion) -> "PlaybackState":
        new_buffer, stall = advance_buffer(
            self.buffer, transmission_time, version.duration, self.max_buffer
        )
        if not self.playing:
            stall = 0.0  # startup delay is accounted separately
        return PlaybackState(
            buffer=new_buffer,
            last_quality=version.quality,
            playing=True,
            cumulative_stall=self.cumulative_stall + stall,
            max_buffer=self.max_buffer,
        )


def chunk_qoe(
    version: ChunkVersion,
    prev_quality: Optional[float],
    transmission_time: float,
    buffer: float,
    weights: QoeWeights,
) -> float:
    """QoE of sending ``version``: quality minus variation minus stall penalties."""
    if transmission_time < 0 or buffer < 0:
        raise ValueError("transmission_time and buffer must be non-negative")
    q = version.quality
    variation = 0.0 if prev_quality is None else abs(q - prev_quality)
    stall = max(transmission_time - buffer, 0.0)
    return q - weights.lam * variation - weights.mu * stall


def advance_buffer(
    buffer: float, transmission_time: float, chunk_duration: float, max_buffer: float
) -> tuple[float, float]:
    """Drain the buffer over one transmission, then append the chunk.

    Returns ``(new_buffer, stall)``.
    """
    if min(buffer, transmission_time, chunk_duration, max_buffer) < 0:
        raise ValueError("advance_buffer inputs must be non-negative")
    stall = max(transmission_time - buffer, 0.0)
    new_buffer = min(max(buffer - transmission_time, 0.0) + chunk_duration, max_buffer)
    return new_buffer, stall


def make_chunk(index: int, sizes: Sequence[int], qualities: Sequence[float],
               duration: float = DEFAULT_CHUNK_DURATION) -> Chunk:
    return Chunk(
        index,
        tuple(ChunkVersion(int(s), float(q), duration) for s, q in zip(sizes, qualities)),
    )
