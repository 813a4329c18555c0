"""Trace-driven playback simulator.

The network is a fluid pipe whose capacity follows a piecewise-constant trace
plus a fixed one-way delay. Each session fetches chunks sequentially, plays
them from a buffer, and logs the same telemetry a real deployment would.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .control import Horizon
from .data import (
    EPOCH0,
    SECONDS_PER_DAY,
    ClientBufferRow,
    Telemetry,
    VideoAckedRow,
    VideoSentRow,
    emit_archive,
    write_expt_settings,
)
from .domain import DEFAULT_CHUNK_DURATION, Chunk, PlaybackState, QoeWeights, db_to_ssim, make_chunk
from .predictors import PACKET_BYTES, TransportStats
from .schemes import SCHEMES, DecisionContext, Scheme, make_scheme

DEFAULT_BASE_DELAY = 0.040
NEVER_DELIVERED = math.inf
TS_TICKS_PER_SECOND = 90000
WATCH_MEDIAN = 300.0
WATCH_SIGMA = 1.0


class TraceParseError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkTrace:
    """Capacity breakpoints ``(time_s, bytes_per_s)``; the last capacity holds forever."""

    times: tuple[float, ...]
    rates: tuple[float, ...]
    base_delay: float = DEFAULT_BASE_DELAY
    name: str = ""

    def __post_init__(self):
        if not self.times:
            raise ValueError("trace needs at least one breakpoint")
        if len(self.times) != len(self.rates):
            raise ValueError("times and rates differ in length")
        if self.times[0] != 0:
            raise ValueError("trace must start at time 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must be strictly increasing")
        if any(r < 0 for r in self.rates):
            raise ValueError("capacities must be non-negative")
        if self.base_delay < 0:
            raise ValueError("base_delay must be non-negative")

    @property
    def duration(self) -> float:
        return self.times[-1]

    def capacity_at(self, t: float) -> float:
        return self.rates[bisect.bisect_right(self.times, t) - 1]


def load_trace(text: str, name: str = "") -> NetworkTrace:
    """Parse ``time_s,bytes_per_s`` lines; ``#`` starts a comment.

    A comment of the form ``# base_delay=0.04`` sets the one-way delay.
    """
    points = []
    base_delay = DEFAULT_BASE_DELAY
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("base_delay"):
                try:
                    base_delay = float(body.split("=", 1)[1])
                except (IndexError, ValueError):
                    raise TraceParseError(f"line {lineno}: bad base_delay directive") from None
            continue
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise TraceParseError(f"line {lineno}: expected 'time_s,bytes_per_s'")
        try:
            t, rate = float(parts[0]), float(parts[1])
        except ValueError:
            raise TraceParseError(f"line {lineno}: non-numeric field") from None
        if not (math.isfinite(t) and math.isfinite(rate)) or rate < 0:
            raise TraceParseError(f"line {lineno}: invalid value")
        if points and t <= points[-1][0]:
            raise TraceParseError(f"line {lineno}: time {t} not after {points[-1][0]}")
        points.append((t, rate))
    if not points:
        raise TraceParseError("empty trace")
    if points[0][0] != 0:
        raise TraceParseError("line 1: trace must start at time 0")
    return NetworkTrace(tuple(p[0] for p in points), tuple(p[1] for p in points),
                        base_delay, name)


def dump_trace(trace: NetworkTrace) -> str:
    lines = [f"# base_delay={trace.base_delay!r}"]
    lines += [f"{t!r},{r!r}" for t, r in zip(trace.times, trace.rates)]
    return "\n".join(lines) + "\n"


def load_trace_dir(directory) -> list[NetworkTrace]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"trace directory not found: {directory}")
    paths = sorted(p for p in directory.iterdir() if p.suffix in (".csv", ".txt", ".trace"))
    if not paths:
        raise FileNotFoundError(f"no trace files in {directory}")
    traces = []
    for p in paths:
        try:
            traces.append(load_trace(p.read_text(encoding="utf-8"), p.stem))
        except TraceParseError as exc:
            raise TraceParseError(f"{p}: {exc}") from None
    return traces


def transmit(size: float, trace: NetworkTrace, start: float) -> float:
    """Seconds from ``start`` until ``size`` bytes have arrived.

    Data starts flowing one base delay after ``start`` and the result
    includes that delay. Returns ``inf`` if the capacity is zero from some
    point on and the bytes can never arrive.
    """
    if not size > 0:
        raise ValueError("size must be positive")
    t0 = start + trace.base_delay
    times, rates = trace.times, trace.rates
    i = max(bisect.bisect_right(times, t0) - 1, 0)
    t = t0
    remaining = float(size)
    n = len(times)
    while True:
        rate = rates[i]
        end = times[i + 1] if i + 1 < n else math.inf
        if rate > 0:
            need = remaining / rate
            if t + need <= end:
                return (t + need) - t0 + trace.base_delay
            remaining -= rate * (end - t)
        elif end == math.inf:
            return NEVER_DELIVERED
        t = end
        i += 1


def synthetic_trace(rng: np.random.Generator, duration: float = 7200.0,
                    mean_rate: float = 250e3, volatility: float = 0.6,
                    mean_segment: float = 4.0, outage_prob: float = 0.03,
                    base_delay: float = DEFAULT_BASE_DELAY, name: str = "") -> NetworkTrace:
    """Piecewise-constant trace with log-normal capacity segments and short outages."""
    times, rates = [0.0], []
    log_level = 0.0
    t = 0.0
    while True:
        log_level = 0.7 * log_level + rng.normal(0.0, volatility)
        rate = mean_rate * math.exp(log_level - volatility ** 2 / 2)
        if rng.random() < outage_prob:
            rate *= 0.05
        rates.append(float(rate))
        t += float(rng.exponential(mean_segment)) + 0.25
        if t >= duration:
            break
        times.append(round(t, 3))
    return NetworkTrace(tuple(times), tuple(rates), base_delay, name)


def constant_trace(rate: float, base_delay: float = DEFAULT_BASE_DELAY, name="") -> NetworkTrace:
    return NetworkTrace((0.0,), (float(rate),), base_delay, name)


def trace_pool(rng: np.random.Generator, count: int = 40, duration: float = 7200.0,
               min_rate: float = 60e3, max_rate: float = 800e3, volatility: float = 0.4,
               outage_prob: float = 0.01, min_delay: float = 0.02,
               max_delay: float = 0.3) -> list[NetworkTrace]:
    """Heterogeneous paths: mean rate and base delay are log-uniform per trace.

    The defaults span roughly 0.5 to 6.4 Mbit/s and 20 to 300 ms, so the
    per-chunk delay matters for small chunks on some paths and not others.
    """
    traces = []
    for i in range(count):
        rate = float(np.exp(rng.uniform(np.log(min_rate), np.log(max_rate))))
        delay = float(np.exp(rng.uniform(np.log(min_delay), np.log(max_delay))))
        traces.append(synthetic_trace(rng, duration, rate, volatility, outage_prob=outage_prob,
                                      base_delay=delay, name=f"trace_{i:03d}"))
    return traces


# -- video --------------------------------------------------------------------

@dataclass
class VideoSpec:
    """Version table for a video: ``sizes[i, v]`` bytes and ``qualities[i, v]`` SSIM dB."""

    sizes: np.ndarray
    qualities: np.ndarray
    chunk_duration: float = DEFAULT_CHUNK_DURATION
    _chunks: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        self.qualities = np.asarray(self.qualities, dtype=float)
        if self.sizes.ndim != 2 or self.sizes.shape != self.qualities.shape:
            raise ValueError("sizes and qualities must be matching 2-D tables")
        if self.sizes.shape[0] == 0 or self.sizes.shape[1] == 0:
            raise ValueError("video needs at least one chunk and one version")
        if np.any(self.sizes <= 0):
            raise ValueError("chunk sizes must be positive")
        self._chunks = [make_chunk(i, s, q, self.chunk_duration)
                        for i, (s, q) in enumerate(zip(self.sizes, self.qualities))]

    @property
    def num_chunks(self) -> int:
        return self.sizes.shape[0]

    @property
    def num_versions(self) -> int:
        return self.sizes.shape[1]

    def chunk(self, i: int, loop: bool = False) -> Chunk:
        return self._chunks[i % self.num_chunks if loop else i]

    def window(self, i: int, count: int, loop: bool = False) -> list[Chunk]:
        if loop:
            return [self._chunks[(i + k) % self.num_chunks] for k in range(count)]
        return self._chunks[i:i + count]


def dump_video(video: VideoSpec) -> str:
    out = [f"chunks {video.num_chunks} duration {video.chunk_duration!r} versions {video.num_versions}"]
    for sizes, quals in zip(video.sizes, video.qualities):
        out.append(" ".join(f"{int(s)}:{float(q)!r}" for s, q in zip(sizes, quals)))
    return "\n".join(out) + "\n"


def load_video(text: str) -> VideoSpec:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError("empty video spec")
    head = lines[0].split()
    try:
        fields_ = dict(zip(head[::2], head[1::2]))
        n, duration, v = int(fields_["chunks"]), float(fields_["duration"]), int(fields_["versions"])
    except (KeyError, ValueError):
        raise ValueError("video spec header must be 'chunks N duration D versions V'") from None
    if len(lines) - 1 != n:
        raise ValueError(f"video spec declares {n} chunks but has {len(lines) - 1}")
    sizes, quals = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        pairs = [p.split(":") for p in line.split()]
        if len(pairs) != v or any(len(p) != 2 for p in pairs):
            raise ValueError(f"video spec line {lineno}: expected {v} size:ssim_db pairs")
        sizes.append([int(p[0]) for p in pairs])
        quals.append([float(p[1]) for p in pairs])
    return VideoSpec(np.array(sizes), np.array(quals), duration)


DEFAULT_LADDER_MBPS = (0.25, 0.5, 1.0, 1.8, 3.0, 5.0)


def synthetic_video(rng: np.random.Generator, num_chunks: int = 900,
                    ladder_mbps: Sequence[float] = DEFAULT_LADDER_MBPS,
                    jitter: float = 0.3, chunk_duration: float = DEFAULT_CHUNK_DURATION) -> VideoSpec:
    """VBR-like version table.

    Sizes scatter +-``jitter`` around each rung's mean; quality rises with
    log size, minus a per-chunk scene-complexity term.
    """
    ladder = np.asarray(ladder_mbps, dtype=float)
    means = ladder * 1e6 / 8 * chunk_duration
    sizes = np.empty((num_chunks, len(ladder)), dtype=np.int64)
    quals = np.empty((num_chunks, len(ladder)))
    complexity = 0.0
    for i in range(num_chunks):
        complexity = 0.9 * complexity + rng.normal(0, 0.3)
        raw = means * rng.uniform(1 - jitter, 1 + jitter, size=len(ladder)) * math.exp(0.3 * complexity)
        s = np.sort(np.round(raw).astype(np.int64))
        for k in range(1, len(s)):
            s[k] = max(s[k], s[k - 1] + 1)
        q = 9.0 + 3.5 * np.log2(s / (means[0] * math.exp(0.3 * complexity))) / 2.0 \
            - 1.0 * complexity + rng.normal(0, 0.15, size=len(s))
        sizes[i] = s
        quals[i] = np.clip(q, 1.0, 30.0)
    return VideoSpec(sizes, quals, chunk_duration)


# -- sessions -------------------------------------------------------------------

def synth_transport_stats(last_delivery: Optional[tuple[float, float]],
                          base_delay: float) -> TransportStats:
    """Transport statistics synthesised from the last delivered chunk.

    RTTs equal the path delay; cwnd and in-flight are the bandwidth-delay
    product in 1500-byte packets.
    """
    rate = 0.0
    if last_delivery is not None:
        size, elapsed = last_delivery
        rate = size / elapsed if elapsed > 0 else 0.0
    packets = rate * base_delay / PACKET_BYTES
    return TransportStats(packets, packets, base_delay, base_delay, rate)


@dataclass(frozen=True)
class SessionConfig:
    scheme: str = "mpc_hm"
    max_buffer: float = 15.0
    watch_duration: float = WATCH_MEDIAN
    first_chunk: int = 0
    loop_video: bool = False
    trace_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.watch_duration > 0:
            raise ValueError("watch_duration must be positive")


@dataclass(frozen=True)
class ChunkRecord:
    index: int
    version: int
    size: int
    quality: float
    send_time: float
    transmission_time: float
    buffer_before: float
    buffer_after: float
    stall: float


@dataclass
class SessionResult:
    scheme: str
    records: list[ChunkRecord] = field(default_factory=list)
    startup_time: float = 0.0
    played_time: float = 0.0
    stall_time: float = 0.0
    wall_clock: float = 0.0
    playing: bool = False
    aborted: bool = False
    never_delivered: bool = False
    abort_reason: str = ""
    chunk_duration: float = DEFAULT_CHUNK_DURATION

    @property
    def watch_time(self) -> float:
        """Time from first frame to departure (played plus stalled)."""
        return self.played_time + self.stall_time

    def accounting_gap(self) -> float:
        return self.wall_clock - (self.startup_time + self.played_time + self.stall_time)


def chunk_video_ts(index: int, duration: float) -> int:
    return int(round(index * duration * TS_TICKS_PER_SECOND))


def run_session(config: SessionConfig, trace: NetworkTrace, video: VideoSpec, scheme: Scheme,
                horizon_steps: int = 5, stream_id: int = 0, expt_id: int = 0,
                epoch_start: float = EPOCH0) -> tuple[SessionResult, Telemetry]:
    """Simulate one stream until the viewer leaves or the video ends."""
    result = SessionResult(config.scheme, chunk_duration=video.chunk_duration)
    tel = Telemetry()
    max_buffer = config.max_buffer
    dur = video.chunk_duration
    watch = config.watch_duration
    t = 0.0
    buffer = 0.0
    playing = False
    last_quality = None
    last_delivery = None
    history: list[tuple[float, float]] = []
    last_index = math.inf if config.loop_video else video.num_chunks

    def buffer_row(time, event):
        tel.client_buffer.append(ClientBufferRow(
            epoch_start + time, stream_id, expt_id, event, buffer, result.stall_time))

    buffer_row(0.0, "startup")
    i = config.first_chunk
    while i < last_index and t < watch:
        if playing and buffer > max_buffer - dur:
            wait = min(buffer - (max_buffer - dur), watch - t)
            t += wait
            result.played_time += wait
            buffer -= wait
            if t >= watch:
                break

        stats = synth_transport_stats(last_delivery, trace.base_delay)
        upcoming = video.window(i, horizon_steps, config.loop_video)
        chunk = upcoming[0]
        state = PlaybackState(buffer, last_quality, playing, result.stall_time, max_buffer)
        try:
            choice = scheme.choose(DecisionContext(upcoming, state, history[-8:], stats))
            version = chunk.versions[choice]
        except Exception as exc:  # scheme failure ends the session, telemetry is kept
            result.aborted = True
            result.abort_reason = f"{type(exc).__name__}: {exc}"
            break

        ts = chunk_video_ts(i, dur)
        tel.video_sent.append(VideoSentRow(
            epoch_start + t, stream_id, expt_id, ts, version.size, db_to_ssim(version.quality),
            stats.cwnd, stats.in_flight, stats.min_rtt, stats.srtt, stats.delivery_rate))
        elapsed = transmit(version.size, trace, config.trace_offset + t)

        if elapsed == NEVER_DELIVERED:
            remaining = max(watch - t, 0.0)
            if playing:
                drained = min(buffer, remaining)
                result.played_time += drained
                buffer -= drained
                if remaining > drained:
                    buffer_row(t + drained, "rebuffer")
                result.stall_time += remaining - drained
            else:
                result.startup_time += remaining
            t += remaining
            result.aborted = result.never_delivered = True
            result.abort_reason = "never delivered"
            break

        before = buffer
        stall = 0.0
        if not playing:
            result.startup_time += elapsed
            t += elapsed
            buffer = min(dur, max_buffer)
            playing = True
            buffer_row(t, "play")
        else:
            stall = max(elapsed - buffer, 0.0)
            if stall > 0:
                stall_start = t + buffer
                buffer = 0.0
                buffer_row(stall_start, "rebuffer")
            result.played_time += min(elapsed, before)
            result.stall_time += stall
            buffer = min(max(before - elapsed, 0.0) + dur, max_buffer)
            t += elapsed
            buffer_row(t, "play" if stall > 0 else "periodic")
        tel.video_acked.append(VideoAckedRow(epoch_start + t, stream_id, expt_id, ts))
        result.records.append(ChunkRecord(
            i, choice, version.size, version.quality, t - elapsed, elapsed, before, buffer, stall))

        scheme.observe(version.size, elapsed)
        history.append((float(version.size), elapsed))
        last_delivery = (float(version.size), elapsed)
        last_quality = version.quality
        i += 1

    if not result.aborted and i >= last_index and t < watch and playing:
        drained = min(buffer, watch - t)
        t += drained
        buffer -= drained
        result.played_time += drained
    result.wall_clock = t
    result.playing = playing
    buffer_row(t, "periodic")
    return result, tel


# -- randomized experiments --------------------------------------------------------

def expt_id_for(scheme: str) -> int:
    return SCHEMES.index(scheme) + 1 if scheme in SCHEMES else 0


def draw_watch_durations(rng: np.random.Generator, n: int, median: float = WATCH_MEDIAN,
                         sigma: float = WATCH_SIGMA) -> np.ndarray:
    return rng.lognormal(math.log(median), sigma, size=n)


@dataclass(frozen=True)
class Assignment:
    pool_index: int
    scheme: str
    trace: int
    trace_offset: float
    first_chunk: int
    watch_duration: float
    stream_id: int


@dataclass
class ExperimentResult:
    schemes: list[str]
    assignments: list[Assignment]
    results: list[SessionResult]
    telemetry: dict[str, Telemetry]

    def results_for(self, scheme: str) -> list[SessionResult]:
        return [r for a, r in zip(self.assignments, self.results) if a.scheme == scheme]

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for scheme in self.schemes:
            written += emit_archive(self.telemetry[scheme], out_dir / scheme)
        settings = out_dir / "expt_settings.csv"
        write_expt_settings(settings, {expt_id_for(s): s for s in self.schemes})
        log = out_dir / "assignments.csv"
        with log.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pool_index", "stream_id", "scheme", "trace", "trace_offset",
                        "first_chunk", "watch_duration", "aborted"])
            for a, r in zip(self.assignments, self.results):
                w.writerow([a.pool_index, a.stream_id, a.scheme, a.trace, repr(a.trace_offset),
                            a.first_chunk, repr(a.watch_duration), int(r.aborted)])
        return written + [settings, log]


def run_experiment(schemes: Sequence[str], traces: Sequence[NetworkTrace], video: VideoSpec,
                   sessions_per_arm: int, seed: int, models=None,
                   weights: QoeWeights = QoeWeights(), horizon: Horizon = Horizon(),
                   day: int = 0, watch_median: float = WATCH_MEDIAN,
                   watch_sigma: float = WATCH_SIGMA, progress=None) -> ExperimentResult:
    """Randomised trial: draw a shared pool of (trace, offset, start chunk, watch time)
    and deal it out to the schemes, ``sessions_per_arm`` each.
    """
    schemes = list(schemes)
    if not schemes or not traces:
        raise ValueError("need at least one scheme and one trace")
    if sessions_per_arm <= 0:
        raise ValueError("sessions_per_arm must be positive")
    for s in schemes:  # fail fast on unknown names / missing models
        make_scheme(s, weights, horizon, models)
    rng = np.random.default_rng(seed)
    n = len(schemes) * sessions_per_arm
    trace_idx = rng.integers(len(traces), size=n)
    offsets = rng.uniform(0.0, 1.0, size=n)
    first = rng.integers(video.num_chunks, size=n)
    watch = draw_watch_durations(rng, n, watch_median, watch_sigma)
    order = rng.permutation(n)
    arm = np.empty(n, dtype=int)
    arm[order] = np.arange(n) // sessions_per_arm

    assignments, results = [], []
    telemetry = {s: Telemetry() for s in schemes}
    for k in range(n):
        scheme_name = schemes[arm[k]]
        trace = traces[trace_idx[k]]
        a = Assignment(k, scheme_name, int(trace_idx[k]),
                       float(offsets[k] * trace.duration / 2), int(first[k]), float(watch[k]),
                       day * 1_000_000 + k)
        cfg = SessionConfig(scheme_name, weights.max_buffer, a.watch_duration, a.first_chunk,
                            True, a.trace_offset, seed)
        result, tel = run_session(
            cfg, trace, video, make_scheme(scheme_name, weights, horizon, models),
            horizon.steps, a.stream_id, expt_id_for(scheme_name),
            EPOCH0 + day * SECONDS_PER_DAY + k)
        assignments.append(a)
        results.append(result)
        telemetry[scheme_name].extend(tel)
        if progress:
            progress(k + 1, n)
    return ExperimentResult(schemes, assignments, results, telemetry)
