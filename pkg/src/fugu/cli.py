"""Simulate ABR experiments, train transmission-time predictors and report results.

Subcommands: generate, simulate, train, evaluate, ablate, report. Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import nn, plotting
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .data import (
    Telemetry,
    build_training_set,
    day_of,
    join_transmission_times,
    parse_archive,
    read_expt_settings,
)
from .predictors import VARIANTS
from .schemes import EXTERNAL_SCHEMES, SCHEMES, required_models
from .simulator import (
    dump_trace,
    dump_video,
    load_trace_dir,
    load_video,
    run_experiment,
    trace_pool,
    synthetic_video,
)
from .stats import (
    compare_schemes,
    read_plot_data,
    scheme_report,
    summarize_archive,
    write_plot_data,
)
from .training import format_ablation, run_ablation, split_examples, train_variant

log = logging.getLogger("fugu")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _schemes(value: str) -> list[str]:
    return [s.strip() for s in value.split(",") if s.strip()]


def _load_cfg(args) -> ExperimentConfig:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return with_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        out=Path(args.out) if getattr(args, "out", None) else None,
        schemes=getattr(args, "schemes", None),
        sessions=getattr(args, "sessions", None),
        traces=Path(args.traces) if getattr(args, "traces", None) else None,
        video=Path(args.video) if getattr(args, "video", None) else None,
        day=getattr(args, "day", None),
        window_days=getattr(args, "window_days", None),
    )


def _models(specs) -> dict[str, nn.Mlp]:
    """``--model PATH`` or ``--model VARIANT=PATH``; the variant defaults to the file header."""
    models = {}
    for spec in specs or []:
        variant, _, path = spec.rpartition("=")
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"model file not found: {path}")
        try:
            net = nn.load(path)
        except (ValueError, StopIteration) as exc:
            raise DataError(f"{path}: unreadable model ({exc})") from None
        models[variant or net.variant] = net
    return models


# -- generate --------------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    traces = trace_pool(rng, args.traces, args.duration, args.min_rate, args.max_rate,
                        args.volatility, args.outage, args.min_delay, args.max_delay)
    for trace in traces:
        (trace_dir / f"{trace.name}.csv").write_text(dump_trace(trace), encoding="utf-8")
    video = synthetic_video(rng, num_chunks=args.chunks)
    (out / "video.txt").write_text(dump_video(video), encoding="utf-8")
    print(f"wrote {args.traces} traces to {trace_dir} and video spec {out / 'video.txt'}")
    return EXIT_OK


# -- simulate ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    try:
        cfg.check()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if cfg.traces is None:
        raise UsageError("no trace directory given (--traces or [experiment] traces)")
    for s in cfg.schemes:
        if s in EXTERNAL_SCHEMES:
            raise UsageError(f"scheme {s!r} is an external placeholder and cannot be simulated")
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    models = _models(args.model)
    missing = required_models(cfg.schemes) - set(models)
    if missing:
        raise UsageError(f"schemes need trained model(s): {', '.join(sorted(missing))} (--model)")
    try:
        traces = load_trace_dir(cfg.traces)
        if cfg.video is not None:
            video = load_video(Path(cfg.video).read_text(encoding="utf-8"))
        else:
            video = synthetic_video(np.random.default_rng(cfg.seed))
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None

    result = run_experiment(cfg.schemes, traces, video, cfg.sessions, cfg.seed, models,
                            cfg.weights, cfg.horizon, cfg.day, cfg.watch_median, cfg.watch_sigma)
    for r in result.results:
        gap = r.accounting_gap()
        if abs(gap) > 1e-6 * max(1.0, r.wall_clock):
            log.error("accounting identity violated by %.3g s", gap)
            return EXIT_INTERNAL
    result.write(cfg.out)
    aborted = sum(r.aborted for r in result.results)
    print(f"simulated {len(result.results)} sessions ({aborted} aborted) -> {cfg.out}")
    return EXIT_OK


# -- archives ----------------------------------------------------------------------

def _archive_dirs(paths) -> list[tuple[Path, dict[int, str]]]:
    """Expand experiment directories (with expt_settings.csv) into per-scheme archives."""
    found = []
    for p in map(Path, paths):
        if not p.is_dir():
            raise DataError(f"archive directory not found: {p}")
        if (p / "video_sent.csv").exists():
            settings = p.parent / "expt_settings.csv"
            found.append((p, read_expt_settings(settings) if settings.exists() else {}))
            continue
        settings = p / "expt_settings.csv"
        subdirs = sorted(d for d in p.iterdir() if (d / "video_sent.csv").exists())
        if not subdirs:
            raise DataError(f"no telemetry archives under {p}")
        mapping = read_expt_settings(settings) if settings.exists() else {}
        found += [(d, mapping) for d in subdirs]
    return found


def _read_archives(paths) -> tuple[Telemetry, dict[int, str]]:
    tel = Telemetry()
    names: dict[int, str] = {}
    for directory, mapping in _archive_dirs(paths):
        try:
            part, report = parse_archive(directory)
        except (OSError, ValueError) as exc:
            raise DataError(str(exc)) from None
        for err in report.errors:
            log.warning("skipped row %s", err)
        tel.extend(part)
        for row in part.video_sent[:1] + part.client_buffer[:1]:
            names.setdefault(row.expt_id, mapping.get(row.expt_id, directory.name))
    return tel, names


def _training_examples(args, cfg, steps=None):
    tel, _ = _read_archives(args.archives)
    try:
        joined = join_transmission_times(tel.video_sent, tel.video_acked)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    as_of = args.as_of_day
    if as_of is None:
        days = [day_of(c.sent_time) for c in joined.records]
        if not days:
            raise DataError("archives contain no acknowledged chunks")
        as_of = max(days)
    examples = build_training_set(joined, as_of, cfg.window_days, cfg.decay, steps=steps)
    if not examples:
        raise DataError("no training examples inside the window")
    return examples, joined, as_of


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    train_cfg = cfg.training
    if args.epochs is not None or args.seed is not None:
        train_cfg = nn.TrainConfig(train_cfg.learning_rate, train_cfg.batch_size,
                                   args.epochs or train_cfg.epochs,
                                   train_cfg.seed if args.seed is None else args.seed)
    warm = None
    if args.warm_start:
        warm = _models([args.warm_start])
        warm = next(iter(warm.values()))
    steps = cfg.horizon.steps if args.multistep or cfg.multistep else None
    examples, joined, as_of = _training_examples(args, cfg, steps)
    net, report = train_variant(examples, args.variant, train_cfg, cfg.hidden, warm)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nn.save(net, out)
    print(f"variant: {net.variant}")
    print(f"as_of_day: {as_of}  window_days: {cfg.window_days}")
    print(f"examples: {report.examples}  never_acked: {joined.never_acked}  "
          f"rejected: {joined.rejected}")
    print(f"final_loss: {report.final_loss:.6f}")
    print(f"warm_start: {args.warm_start if warm is not None else 'none'}")
    print(f"model: {out}")
    return EXIT_OK


# -- evaluate / report ----------------------------------------------------------------

def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    tel, names = _read_archives(args.archives)
    by_expt: dict[int, Telemetry] = {}
    for table in ("video_sent", "video_acked", "client_buffer"):
        for row in getattr(tel, table):
            getattr(by_expt.setdefault(row.expt_id, Telemetry()), table).append(row)
    reports, stream_rows = [], []
    for expt_id in sorted(by_expt):
        name = names.get(expt_id, f"expt_{expt_id}")
        try:
            summaries = summarize_archive(by_expt[expt_id])
        except ValueError as exc:
            raise DataError(f"{name}: {exc}") from None
        if not any(s.eligible for s in summaries):
            log.warning("%s: no eligible streams, skipped", name)
            continue
        reports.append(scheme_report(name, summaries, args.resamples, 0.95, cfg.seed))
        stream_rows += [(name, s) for s in summaries]
    if not reports:
        raise DataError("no eligible streams in the archives")
    comparison = compare_schemes(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(comparison.table(), encoding="utf-8")
    (out / "table.csv").write_text(comparison.csv(), encoding="utf-8")
    write_plot_data(out / "plot_data.csv", comparison.plot_rows())
    with (out / "streams.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "stream_id", "watch_time", "stall_time", "startup_time",
                    "mean_ssim_db", "ssim_variation_db", "eligible"])
        for name, s in stream_rows:
            w.writerow([name, s.stream_id, repr(s.watch_time), repr(s.stall_time),
                        repr(s.startup_time), "" if s.mean_ssim_db is None else repr(s.mean_ssim_db),
                        "" if s.ssim_variation_db is None else repr(s.ssim_variation_db),
                        int(s.eligible)])
    sys.stdout.write(comparison.table())
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.evaluation)
    plot_path = src / "plot_data.csv"
    if not plot_path.exists():
        raise DataError(f"no plot_data.csv in {src} (run 'evaluate' first)")
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    try:
        rows = read_plot_data(plot_path)
    except ValueError as exc:
        raise DataError(f"{plot_path}: {exc}") from None
    written = [plotting.quality_stall_plane(rows, out / "ssim_vs_stall.png")]
    streams = src / "streams.csv"
    if streams.exists():
        per_scheme: dict[str, list[float]] = {}
        with streams.open(newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                if r["eligible"] == "1" and r["mean_ssim_db"]:
                    per_scheme.setdefault(r["scheme"], []).append(float(r["mean_ssim_db"]))
        written.append(plotting.ssim_cdf(per_scheme, out / "ssim_cdf.png"))
    ablation = src / "ablation.csv"
    if ablation.exists():
        with ablation.open(newline="", encoding="utf-8") as fh:
            rows_ab = [{"variant": r["variant"], "cross_entropy": float(r["cross_entropy"])}
                       for r in csv.DictReader(fh)]
        written.append(plotting.ablation_bars(rows_ab, out / "ablation.png"))
    table = src / "table.txt"
    if table.exists():
        sys.stdout.write(table.read_text(encoding="utf-8"))
    for p in written:
        print(f"figure: {p}")
    return EXIT_OK


# -- ablate ----------------------------------------------------------------------

def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    examples, _, _ = _training_examples(args, cfg)
    train, test = split_examples(examples, args.held_out, cfg.seed)
    if not train or not test:
        raise DataError("not enough streams to hold some out")
    rows = run_ablation(train, test, cfg.training, cfg.hidden)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(format_ablation(rows), encoding="utf-8")
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "cross_entropy", "accuracy", "train_loss"])
        for r in rows:
            w.writerow([r.variant, repr(r.cross_entropy), repr(r.accuracy), repr(r.train_loss)])
    sys.stdout.write(format_ablation(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fugu", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=out_help)

    g = sub.add_parser("generate", help="write synthetic traces and a video spec")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--traces", type=int, default=40)
    g.add_argument("--duration", type=float, default=7200.0)
    g.add_argument("--min-rate", type=float, default=60e3, help="bytes/s")
    g.add_argument("--max-rate", type=float, default=800e3, help="bytes/s")
    g.add_argument("--volatility", type=float, default=0.4)
    g.add_argument("--outage", type=float, default=0.01, help="per-segment outage probability")
    g.add_argument("--min-delay", type=float, default=0.02, help="seconds")
    g.add_argument("--max-delay", type=float, default=0.3, help="seconds")
    g.add_argument("--chunks", type=int, default=900)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="run a randomized experiment over traces")
    common(s, "output directory for archives")
    s.add_argument("--schemes", type=_schemes)
    s.add_argument("--sessions", type=int, help="sessions per scheme")
    s.add_argument("--traces", help="trace directory")
    s.add_argument("--video", help="video spec file")
    s.add_argument("--day", type=int, help="day index stamped on telemetry")
    s.add_argument("--model", action="append", help="[VARIANT=]PATH of a trained predictor")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a predictor from telemetry archives")
    common(t, "model file to write")
    t.add_argument("--archives", nargs="+", required=True)
    t.add_argument("--window-days", type=int)
    t.add_argument("--as-of-day", type=int)
    t.add_argument("--warm-start")
    t.add_argument("--variant", choices=[v for v in VARIANTS if v != "point"], default="full")
    t.add_argument("--epochs", type=int)
    t.add_argument("--multistep", action="store_true",
                   help="one network for every horizon step (adds a step input)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="per-scheme statistics with confidence intervals")
    common(e, "directory for tables and plot data")
    e.add_argument("--archives", nargs="+", required=True)
    e.add_argument("--resamples", type=int, default=1000)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="held-out comparison of predictor variants")
    common(a, "directory for the ablation table")
    a.add_argument("--archives", nargs="+", required=True)
    a.add_argument("--window-days", type=int)
    a.add_argument("--as-of-day", type=int)
    a.add_argument("--held-out", type=float, default=0.25)
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="render figures from an evaluation directory")
    r.add_argument("--evaluation", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    for attr in ("out",):
        if getattr(args, attr, None) is None and args.command in ("train", "evaluate", "ablate"):
            parser.error(f"{args.command} requires --out")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fugu {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"fugu {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, FloatingPointError) as exc:
        print(f"fugu {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
