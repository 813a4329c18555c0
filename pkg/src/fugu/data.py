"""Telemetry in the open-data layout: ``video_sent``, ``video_acked`` and
``client_buffer`` measurements, one CSV file each.

Both sent and acked rows carry a ``video_ts`` column (presentation timestamp,
90 kHz ticks) so that acknowledgements can be matched to sends.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .predictors import (
    HISTORY_LEN,
    THROUGHPUT_INPUT_DIM,
    TransportStats,
    TtpInput,
    discretize,
    discretize_throughput,
)

EPOCH0 = 1546300800.0  # 2019-01-01T00:00:00Z, day 0 of simulated archives
SECONDS_PER_DAY = 86400.0
RECENCY_DECAY = 0.9
WINDOW_DAYS = 14
EVENTS = ("periodic", "startup", "play", "rebuffer")

VIDEO_SENT = "video_sent"
VIDEO_ACKED = "video_acked"
CLIENT_BUFFER = "client_buffer"


@dataclass(frozen=True)
class VideoSentRow:
    time: float
    stream_id: int
    expt_id: int
    video_ts: int
    size: int
    ssim_index: float
    cwnd: float
    in_flight: float
    min_rtt: float
    rtt: float
    delivery_rate: float

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"size must be positive, got {self.size}")
        if not (0.0 <= self.ssim_index <= 1.0):
            raise ValueError(f"ssim_index {self.ssim_index} outside [0, 1]")

    @property
    def stats(self) -> TransportStats:
        return TransportStats(self.cwnd, self.in_flight, self.min_rtt, self.rtt,
                              self.delivery_rate)


@dataclass(frozen=True)
class VideoAckedRow:
    time: float
    stream_id: int
    expt_id: int
    video_ts: int


@dataclass(frozen=True)
class ClientBufferRow:
    time: float
    stream_id: int
    expt_id: int
    event: str
    buffer: float
    cum_rebuf: float

    def __post_init__(self):
        if self.event not in EVENTS:
            raise ValueError(f"unknown client_buffer event {self.event!r}")
        if self.buffer < 0 or self.cum_rebuf < 0:
            raise ValueError("buffer and cum_rebuf must be non-negative")


ROW_TYPES = {VIDEO_SENT: VideoSentRow, VIDEO_ACKED: VideoAckedRow, CLIENT_BUFFER: ClientBufferRow}


@dataclass
class Telemetry:
    video_sent: list[VideoSentRow] = field(default_factory=list)
    video_acked: list[VideoAckedRow] = field(default_factory=list)
    client_buffer: list[ClientBufferRow] = field(default_factory=list)

    def extend(self, other: "Telemetry") -> None:
        self.video_sent.extend(other.video_sent)
        self.video_acked.extend(other.video_acked)
        self.client_buffer.extend(other.client_buffer)

    def tables(self):
        return {VIDEO_SENT: self.video_sent, VIDEO_ACKED: self.video_acked,
                CLIENT_BUFFER: self.client_buffer}

    def streams(self) -> list[int]:
        return sorted({r.stream_id for r in self.client_buffer} | {r.stream_id for r in self.video_sent})

    def by_stream(self) -> dict[int, "Telemetry"]:
        out: dict[int, Telemetry] = defaultdict(Telemetry)
        for r in self.video_sent:
            out[r.stream_id].video_sent.append(r)
        for r in self.video_acked:
            out[r.stream_id].video_acked.append(r)
        for r in self.client_buffer:
            out[r.stream_id].client_buffer.append(r)
        return dict(sorted(out.items()))


def _field_names(row_type) -> list[str]:
    return [f.name for f in dataclasses.fields(row_type)]


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_archive(telemetry: Telemetry, directory) -> list[Path]:
    """Write the three measurement files into ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in telemetry.tables().items():
        path = directory / f"{name}.csv"
        names = _field_names(ROW_TYPES[name])
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in rows:
                writer.writerow([_format(getattr(row, n)) for n in names])
        paths.append(path)
    return paths


@dataclass
class ParseReport:
    rows: dict[str, int] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)


def _convert(row_type, names: list[str], values: list[str]):
    kwargs = {}
    for f in dataclasses.fields(row_type):
        raw = values[names.index(f.name)]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} is not finite")
            kwargs[f.name] = v
        else:
            kwargs[f.name] = raw
    return row_type(**kwargs)


def parse_table(path, row_type, report: ParseReport, name: str) -> list:
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        expected = _field_names(row_type)
        missing = [n for n in expected if n not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, values in enumerate(reader, start=2):
            if not values:
                continue
            try:
                if len(values) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(values)}")
                rows.append(_convert(row_type, header, values))
            except ValueError as exc:
                report.errors.append(f"{path}:{lineno}: {exc}")
    report.rows[name] = report.rows.get(name, 0) + len(rows)
    return rows


def parse_archive(directories) -> tuple[Telemetry, ParseReport]:
    """Read one or more archive directories. Bad rows are skipped and listed in the report."""
    if isinstance(directories, (str, Path)):
        directories = [directories]
    telemetry = Telemetry()
    report = ParseReport()
    for directory in directories:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"archive directory not found: {directory}")
        for name, row_type in ROW_TYPES.items():
            path = directory / f"{name}.csv"
            if not path.exists():
                raise FileNotFoundError(f"archive file not found: {path}")
            getattr(telemetry, name).extend(parse_table(path, row_type, report, name))
    return telemetry, report


def write_expt_settings(path, mapping: dict[int, str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["expt_id", "scheme"])
        for expt_id, scheme in sorted(mapping.items()):
            writer.writerow([expt_id, scheme])


def read_expt_settings(path) -> dict[int, str]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {int(r["expt_id"]): r["scheme"] for r in csv.DictReader(fh)}


# -- join and training set ----------------------------------------------------

@dataclass(frozen=True)
class JoinedChunk:
    stream_id: int
    expt_id: int
    video_ts: int
    sent_time: float
    size: int
    ssim_index: float
    stats: TransportStats
    transmission_time: float


@dataclass
class JoinResult:
    streams: dict[int, list[JoinedChunk]]
    never_acked: int = 0
    rejected: int = 0

    @property
    def records(self) -> list[JoinedChunk]:
        return [c for chunks in self.streams.values() for c in chunks]


def join_transmission_times(sent: Sequence[VideoSentRow],
                            acked: Sequence[VideoAckedRow]) -> JoinResult:
    """Match acks to sends on ``(stream_id, video_ts)``.

    Unacknowledged sends are counted in ``never_acked``; non-positive
    transmission times (clock skew) are counted in ``rejected``.
    """
    acks: dict[tuple[int, int], VideoAckedRow] = {}
    for row in acked:
        key = (row.stream_id, row.video_ts)
        if key in acks:
            raise ValueError(f"duplicate video_acked row for stream {key[0]}, video_ts {key[1]}")
        acks[key] = row
    seen = set()
    streams: dict[int, list[JoinedChunk]] = defaultdict(list)
    result = JoinResult(streams={})
    for row in sent:
        key = (row.stream_id, row.video_ts)
        if key in seen:
            raise ValueError(f"duplicate video_sent row for stream {key[0]}, video_ts {key[1]}")
        seen.add(key)
        ack = acks.get(key)
        if ack is None:
            result.never_acked += 1
            continue
        elapsed = ack.time - row.time
        if not elapsed > 0:
            result.rejected += 1
            continue
        streams[row.stream_id].append(JoinedChunk(
            row.stream_id, row.expt_id, row.video_ts, row.time, row.size, row.ssim_index,
            row.stats, elapsed,
        ))
    result.streams = {sid: sorted(chunks, key=lambda c: c.video_ts)
                      for sid, chunks in sorted(streams.items())}
    return result


@dataclass(frozen=True)
class TrainingExample:
    input: TtpInput
    target_bin: int
    weight: float
    day_age: int
    transmission_time: float
    stream_id: int = 0


def day_of(epoch_time: float, epoch0: float = EPOCH0) -> int:
    return int(math.floor((epoch_time - epoch0) / SECONDS_PER_DAY))


def build_training_set(joined: JoinResult, as_of_day: int, window_days: int = WINDOW_DAYS,
                       decay: float = RECENCY_DECAY, epoch0: float = EPOCH0,
                       steps: Optional[int] = None) -> list[TrainingExample]:
    """One example per joined chunk sent within the window ending on ``as_of_day``.

    The input uses that stream's previous (up to eight) acknowledged chunks;
    ``weight = decay ** day_age``. With ``steps`` (multi-step configuration)
    each chunk also yields examples for the chunks ``1 .. steps - 1`` ahead,
    predicted from the same history and transport statistics.
    """
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    if steps is not None and steps < 1:
        raise ValueError("steps must be positive")
    examples = []
    for chunks in joined.streams.values():
        for i, chunk in enumerate(chunks):
            age = as_of_day - day_of(chunk.sent_time, epoch0)
            if not 0 <= age < window_days:
                continue
            prior = chunks[max(0, i - HISTORY_LEN):i]
            sizes = tuple(float(c.size) for c in prior)
            times = tuple(c.transmission_time for c in prior)
            for step in range(steps or 1):
                if i + step >= len(chunks):
                    break
                target = chunks[i + step]
                inp = TtpInput(sizes, times, chunk.stats, float(target.size),
                               None if steps is None else step)
                examples.append(TrainingExample(
                    inp, discretize(target.transmission_time), decay ** age, age,
                    target.transmission_time, chunk.stream_id,
                ))
    return examples


def training_arrays(examples: Sequence[TrainingExample],
                    variant: str = "full") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Design matrix, targets and weights for a predictor variant.

    The throughput variant drops the candidate-size column and targets the
    throughput bin of ``size / transmission_time``.
    """
    if variant == "throughput":
        # size-blind: only the next chunk's example is meaningful
        examples = [e for e in examples if not e.input.step]
    if not examples:
        raise ValueError("no training examples")
    x = np.array([e.input.vector() for e in examples])
    w = np.array([e.weight for e in examples])
    if variant == "throughput":
        sizes = np.array([e.input.candidate_size for e in examples])
        times = np.array([e.transmission_time for e in examples])
        return x[:, :THROUGHPUT_INPUT_DIM], discretize_throughput(sizes / times), w
    y = np.array([e.target_bin for e in examples], dtype=int)
    return x, y, w
