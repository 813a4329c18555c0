"""Per-stream summaries and per-scheme aggregates with confidence intervals.

Stall ratio is pooled (total stalled time over total watch time) and its
interval comes from a percentile bootstrap that resamples streams within
watch-duration deciles. Mean SSIM is weighted by stream duration with a
weighted standard error.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Telemetry
from .domain import DEFAULT_CHUNK_DURATION, ssim_to_db

MIN_PLAYED = 4.0
Z95 = 1.959963984540054


@dataclass(frozen=True)
class StreamSummary:
    watch_time: float
    stall_time: float
    startup_time: float
    mean_ssim_db: Optional[float]
    ssim_variation_db: Optional[float]
    eligible: bool
    stream_id: int = 0

    @property
    def played_time(self) -> float:
        return self.watch_time - self.stall_time


def _quality_stats(qualities: Sequence[float], played: float, duration: float):
    """Play-time-weighted mean and mean absolute step of the chunks actually shown."""
    shown, weights = [], []
    for k, q in enumerate(qualities):
        w = min(max(played - k * duration, 0.0), duration)
        if w <= 0:
            break
        shown.append(q)
        weights.append(w)
    if not shown:
        return None, None
    mean = float(np.average(shown, weights=weights))
    steps = np.abs(np.diff(shown))
    variation = float(steps.mean()) if len(steps) else 0.0
    return mean, variation


def summarize_values(watch_time: float, stall_time: float, startup_time: float,
                     qualities: Sequence[float], chunk_duration: float = DEFAULT_CHUNK_DURATION,
                     stream_id: int = 0) -> StreamSummary:
    played = watch_time - stall_time
    mean, variation = _quality_stats(qualities, played, chunk_duration)
    eligible = played >= MIN_PLAYED and mean is not None
    return StreamSummary(watch_time, stall_time, startup_time, mean, variation, eligible, stream_id)


def summarize_stream(source, chunk_duration: Optional[float] = None) -> StreamSummary:
    """Summarise one stream from a :class:`SessionResult` or its telemetry."""
    if isinstance(source, Telemetry):
        return _summarize_telemetry(source, chunk_duration or DEFAULT_CHUNK_DURATION)
    duration = chunk_duration or getattr(source, "chunk_duration", DEFAULT_CHUNK_DURATION)
    return summarize_values(source.watch_time, source.stall_time, source.startup_time,
                            [r.quality for r in source.records], duration)


def _summarize_telemetry(tel: Telemetry, chunk_duration: float) -> StreamSummary:
    rows = sorted(tel.client_buffer, key=lambda r: r.time)
    if not rows:
        raise ValueError("stream has no client_buffer rows")
    ids = {r.stream_id for r in rows}
    if len(ids) != 1:
        raise ValueError("telemetry spans more than one stream")
    for a, b in zip(rows, rows[1:]):
        if b.cum_rebuf < a.cum_rebuf:
            raise ValueError(f"cum_rebuf decreases in stream {a.stream_id}")
    start = next((r.time for r in rows if r.event == "startup"), rows[0].time)
    end = rows[-1].time
    play = next((r.time for r in rows if r.event == "play"), None)
    stream_id = ids.pop()
    if play is None:
        return StreamSummary(0.0, 0.0, end - start, None, None, False, stream_id)
    acked = {r.video_ts for r in tel.video_acked}
    sent = sorted((r for r in tel.video_sent if r.video_ts in acked), key=lambda r: r.video_ts)
    qualities = [ssim_to_db(r.ssim_index) for r in sent]
    return summarize_values(end - play, rows[-1].cum_rebuf, play - start, qualities,
                            chunk_duration, stream_id)


def summarize_archive(tel: Telemetry, chunk_duration: float = DEFAULT_CHUNK_DURATION
                      ) -> list[StreamSummary]:
    return [summarize_stream(t, chunk_duration) for t in tel.by_stream().values()]


def _eligible(summaries: Sequence[StreamSummary]) -> list[StreamSummary]:
    return [s for s in summaries if s.eligible]


def aggregate_stall_ratio(summaries: Sequence[StreamSummary]) -> float:
    """Total stalled time over total watch time across eligible streams."""
    streams = _eligible(summaries)
    if not streams:
        raise ValueError("no eligible streams")
    watch = math.fsum(s.watch_time for s in streams)
    if watch <= 0:
        raise ValueError("total watch time is zero")
    return math.fsum(s.stall_time for s in streams) / watch


def weighted_mean_se(values, weights) -> tuple[float, Optional[float]]:
    """Weighted mean and its standard error using the Kish effective sample size.

    ``se = sqrt(var_w / (n_eff - 1))`` with ``var_w`` the weighted population
    variance and ``n_eff = (sum w)^2 / sum w^2``; equal weights reduce this to
    ``s / sqrt(n)``.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    mean = float(np.sum(w * x) / np.sum(w))
    if len(x) < 2:
        return mean, None
    var = float(np.sum(w * (x - mean) ** 2) / np.sum(w))
    n_eff = float(np.sum(w) ** 2 / np.sum(w ** 2))
    if n_eff <= 1:
        return mean, None
    return mean, math.sqrt(var / (n_eff - 1))


def aggregate_ssim(summaries: Sequence[StreamSummary]) -> tuple[float, Optional[float]]:
    streams = [s for s in _eligible(summaries) if s.mean_ssim_db is not None]
    if not streams:
        raise ValueError("no eligible streams with SSIM")
    return weighted_mean_se([s.mean_ssim_db for s in streams], [s.watch_time for s in streams])


def aggregate_variation(summaries: Sequence[StreamSummary]) -> float:
    streams = [s for s in _eligible(summaries) if s.ssim_variation_db is not None]
    if not streams:
        raise ValueError("no eligible streams with SSIM")
    return float(np.average([s.ssim_variation_db for s in streams],
                            weights=[s.watch_time for s in streams]))


def duration_strata(watch_times: np.ndarray, n_strata: int = 10) -> list[np.ndarray]:
    """Index groups by watch-time rank; groups of one are merged into a neighbour."""
    order = np.argsort(watch_times, kind="stable")
    k = max(1, min(n_strata, len(order) // 2))
    return [g for g in np.array_split(order, k)]


def bootstrap_stall_ci(summaries: Sequence[StreamSummary], resamples: int = 1000,
                       level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval for the pooled stall ratio.

    Each resample redraws streams with replacement inside every watch-time
    decile, keeping the decile sizes.
    """
    streams = _eligible(summaries)
    if len(streams) < 2:
        raise ValueError("bootstrap needs at least two eligible streams")
    stall = np.array([s.stall_time for s in streams])
    watch = np.array([s.watch_time for s in streams])
    rng = np.random.default_rng(seed)
    stall_sum = np.zeros(resamples)
    watch_sum = np.zeros(resamples)
    for group in duration_strata(watch):
        picks = group[rng.integers(len(group), size=(resamples, len(group)))]
        stall_sum += stall[picks].sum(axis=1)
        watch_sum += watch[picks].sum(axis=1)
    ratios = stall_sum / watch_sum
    alpha = (1.0 - level) / 2
    lo, hi = np.quantile(ratios, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


@dataclass(frozen=True)
class SchemeReport:
    scheme: str
    stall_ratio: float
    stall_ci: tuple[float, float]
    mean_ssim_db: float
    ssim_ci: Optional[tuple[float, float]]
    ssim_variation_db: float
    streams: int
    watch_time: float
    startup_time: float = 0.0

    def __post_init__(self):
        lo, hi = self.stall_ci
        if not lo <= self.stall_ratio <= hi:
            raise ValueError("stall ratio outside its confidence interval")


def scheme_report(scheme: str, summaries: Sequence[StreamSummary], resamples: int = 1000,
                  level: float = 0.95, seed: int = 0) -> SchemeReport:
    streams = _eligible(summaries)
    ratio = aggregate_stall_ratio(streams)
    if len(streams) >= 2:
        lo, hi = bootstrap_stall_ci(streams, resamples, level, seed)
        # a percentile interval can miss the point estimate on very skewed data
        lo, hi = min(lo, ratio), max(hi, ratio)
    else:
        lo = hi = ratio
    mean, se = aggregate_ssim(streams)
    z = Z95 if level == 0.95 else float(_normal_quantile(0.5 + level / 2))
    ssim_ci = (mean - z * se, mean + z * se) if se is not None else None
    return SchemeReport(
        scheme, ratio, (lo, hi), mean, ssim_ci, aggregate_variation(streams), len(streams),
        math.fsum(s.watch_time for s in streams),
        float(np.mean([s.startup_time for s in streams])),
    )


def _normal_quantile(p: float) -> float:
    from statistics import NormalDist
    return NormalDist().inv_cdf(p)


# -- comparison ---------------------------------------------------------------------

PLOT_FIELDS = ("name", "stall", "stall_lo", "stall_hi", "ssim", "ssim_lo", "ssim_hi")


def intervals_disjoint(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[1] < b[0] or b[1] < a[0]


@dataclass
class Comparison:
    reports: list[SchemeReport]
    distinguishable: dict[tuple[str, str], bool]

    def table(self) -> str:
        header = ["scheme", "streams", "watch_h", "stall_%", "stall_95ci_%", "ssim_db",
                  "ssim_95ci_db", "ssim_var_db", "startup_s"]
        rows = [header]
        for r in self.reports:
            ssim_ci = "-" if r.ssim_ci is None else f"[{r.ssim_ci[0]:.2f}, {r.ssim_ci[1]:.2f}]"
            rows.append([
                r.scheme, str(r.streams), f"{r.watch_time / 3600:.2f}",
                f"{100 * r.stall_ratio:.3f}",
                f"[{100 * r.stall_ci[0]:.3f}, {100 * r.stall_ci[1]:.3f}]",
                f"{r.mean_ssim_db:.2f}", ssim_ci, f"{r.ssim_variation_db:.2f}",
                f"{r.startup_time:.2f}",
            ])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
        if self.distinguishable:
            lines.append("")
            for (a, b), flag in self.distinguishable.items():
                verdict = "distinguishable" if flag else "overlapping stall CIs"
                lines.append(f"{a} vs {b}: {verdict}")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["scheme", "streams", "watch_time", "stall_ratio", "stall_lo", "stall_hi",
                    "mean_ssim_db", "ssim_lo", "ssim_hi", "ssim_variation_db", "startup_time"])
        for r in self.reports:
            lo, hi = r.ssim_ci if r.ssim_ci else (r.mean_ssim_db, r.mean_ssim_db)
            w.writerow([r.scheme, r.streams, repr(r.watch_time), repr(r.stall_ratio),
                        repr(r.stall_ci[0]), repr(r.stall_ci[1]), repr(r.mean_ssim_db),
                        repr(lo), repr(hi), repr(r.ssim_variation_db), repr(r.startup_time)])
        return out.getvalue()

    def plot_rows(self) -> list[dict]:
        rows = []
        for r in self.reports:
            lo, hi = r.ssim_ci if r.ssim_ci else (r.mean_ssim_db, r.mean_ssim_db)
            rows.append(dict(name=r.scheme, stall=r.stall_ratio, stall_lo=r.stall_ci[0],
                             stall_hi=r.stall_ci[1], ssim=r.mean_ssim_db, ssim_lo=lo, ssim_hi=hi))
        return rows


def compare_schemes(reports: Sequence[SchemeReport]) -> Comparison:
    if not reports:
        raise ValueError("nothing to compare")
    reports = list(reports)
    flags = {}
    for i, a in enumerate(reports):
        for b in reports[i + 1:]:
            flags[(a.scheme, b.scheme)] = intervals_disjoint(a.stall_ci, b.stall_ci)
    return Comparison(reports, flags)


def dumps_plot_data(rows: Sequence[dict]) -> str:
    """CSV with one row per scheme: name, stall, stall_lo, stall_hi, ssim, ssim_lo, ssim_hi."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PLOT_FIELDS)
    for row in rows:
        w.writerow([row["name"]] + [repr(float(row[k])) for k in PLOT_FIELDS[1:]])
    return out.getvalue()


def loads_plot_data(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != PLOT_FIELDS:
        raise ValueError(f"plot data header must be {','.join(PLOT_FIELDS)}")
    return [{"name": r["name"], **{k: float(r[k]) for k in PLOT_FIELDS[1:]}} for r in reader]


def write_plot_data(path, rows) -> None:
    Path(path).write_text(dumps_plot_data(rows), encoding="utf-8")


def read_plot_data(path) -> list[dict]:
    return loads_plot_data(Path(path).read_text(encoding="utf-8"))
