"""Command-line entry point.

Subcommands:
  run          execute one scenario against a manifest + dataset, write report/trace
  validate     parse and check a manifest, reporting the first problem
  report       summarize a trace file: aligned hierarchy, top-k layers, CSV + figures
  plotdata     flatten report files into plot-ready CSV (+ optional figures)
  gen-dataset  emit synthetic datasets in the binary dataset format

Exit codes: 0 success, 1 validation problem, 2 runtime failure, 3 checksum
mismatch. Every failure prints one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from . import dataset as ds
from . import figures, metrics, trace
from .clock import make_clock
from .errors import ChecksumMismatch, ConfigError, HarnessError
from .loadgen import NS_PER_S, ScenarioConfig, run_scenario
from .manifest import load_manifest, resolve_model_source
from .processor import pipeline_from_manifest
from .sut import LatencyModel, LayerPlan, SimulatedBackend, SimulatedBackendConfig, Sut
from .trace import Level, SpanRecorder, TraceSet

_SCENARIO_NAMES = {
    "offline": "offline",
    "single-stream": "single_stream",
    "server": "server",
    "multistream": "multistream",
}

_DURATION_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": NS_PER_S}


def parse_duration_ns(text: str) -> int:
    m = re.fullmatch(r"\s*([0-9.]+)\s*(ns|us|ms|s)\s*", text)
    if not m:
        raise ConfigError(f"bad duration {text!r}; use e.g. 10ms, 250us, 1s")
    return int(float(m.group(1)) * _DURATION_UNITS[m.group(2)])


def parse_latency_model(text: str) -> LatencyModel:
    """constant:10ms | uniform:5ms,15ms | exponential:5ms"""
    kind, _, rest = text.partition(":")
    params = [parse_duration_ns(p) for p in rest.split(",") if p.strip()]
    try:
        return LatencyModel(kind.strip(), tuple(float(p) for p in params))
    except ValueError as e:
        raise ConfigError(f"bad latency model {text!r}: {e}") from e


def parse_layer_fractions(text: str) -> tuple[LayerPlan, ...]:
    fracs = [float(f) for f in text.split(",") if f.strip()]
    # each simulated layer gets a fixed two-kernel split for kernel-depth runs
    return tuple(
        LayerPlan(f"layer{i}", f, kernel_fractions=(0.7, 0.3))
        for i, f in enumerate(fracs)
    )


def _fail(code: int, err: BaseException) -> int:
    line = json.dumps({"error": type(err).__name__, "message": str(err)})
    print(line, file=sys.stderr)
    return code


def _exit_code_for(err: BaseException) -> int:
    if isinstance(err, ChecksumMismatch):
        return 3
    from .errors import (
        ConstraintParseError,
        ManifestSyntaxError,
        ReportParseError,
        ValidationError,
    )

    validation = (
        ValidationError, ManifestSyntaxError, ConstraintParseError,
        ConfigError, ReportParseError, FileNotFoundError, IsADirectoryError,
    )
    return 1 if isinstance(err, validation) else 2


# --- run ------------------------------------------------------------------------


def _build_backend(args, emit_level: Level) -> SimulatedBackend:
    cfg = SimulatedBackendConfig(
        latency=parse_latency_model(args.backend_latency),
        behavior=args.backend_behavior,
        error_rate=args.error_rate,
        seed=args.backend_seed if args.backend_seed is not None else args.seed,
        layer_plan=parse_layer_fractions(args.layer_fractions),
        max_concurrency=args.max_concurrency,
    )
    return SimulatedBackend(cfg, emit_level=emit_level)


def cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    resolve_model_source(
        manifest.model_source,
        cache_dir=args.cache_dir,
        base_dir=Path(args.manifest).parent,
    )
    store = ds.load_store(args.dataset, args.labels)

    scenario = _SCENARIO_NAMES[args.scenario]
    offline_count = None
    if scenario == "offline":
        offline_count = args.offline_count if args.offline_count else len(store)
    cfg = ScenarioConfig(
        scenario=scenario,
        seed=args.seed,
        mode=args.mode,
        min_query_count=args.min_query_count,
        min_duration_ns=args.min_duration_ms * 1_000_000,
        target_qps=args.qps if scenario == "server" else None,
        samples_per_query=args.samples_per_query if scenario == "multistream" else None,
        offline_sample_count=offline_count,
    )

    clock = make_clock(args.clock)
    level = Level.from_name(args.trace_level)
    traceset = TraceSet()
    run_id = f"{scenario}-seed{args.seed}"
    traceset.start_run(run_id, level)
    recorder = SpanRecorder(traceset, run_id)

    pipeline = pipeline_from_manifest(manifest, io_timeout_s=args.worker_timeout_s)
    backend = _build_backend(args, level)
    sut = Sut(store, pipeline, backend, clock, recorder)

    pipeline.start()
    try:
        result = run_scenario(cfg, sut)
    finally:
        pipeline.stop()

    accuracy = None
    if cfg.mode == "accuracy" and store.labels is not None:
        predictions = [klass for _, klass in result.predictions]
        labels = [store.labels[idx] for idx, _ in result.predictions]
        accuracy = metrics.top1_accuracy(predictions, labels).value

    report = metrics.summarize(
        result.records,
        cfg,
        result.elapsed_ns,
        model=manifest.name,
        system=args.system,
        achieved_qps=result.achieved_qps,
        accuracy=accuracy,
        extra_config={
            "clock": args.clock,
            "trace_level": args.trace_level,
            "backend_latency": args.backend_latency,
            "backend_behavior": args.backend_behavior,
        },
    )
    out = Path(args.out)
    out.write_text(metrics.serialize_report(report), encoding="utf-8")
    if args.trace_out:
        trace.save_trace(args.trace_out, traceset, run_id)
    print(
        f"{scenario}: {report.query_count} queries, {report.sample_count} samples, "
        f"{report.headline_metric}={report.headline_value:g}"
        + (f", accuracy={accuracy:.4f}" if accuracy is not None else "")
    )
    print(f"report written to {out}")
    return 0


# --- validate ---------------------------------------------------------------------


def cmd_validate(args) -> int:
    manifest = load_manifest(args.manifest)
    style = manifest.processing.kind
    steps = (
        ", ".join(s.name for s in manifest.processing.built_in)
        if style == "built_in"
        else manifest.processing.external.worker_launch
    )
    print(f"{manifest.name} {manifest.version}: ok")
    print(f"  framework: {manifest.framework.name} {manifest.framework.version_constraint}")
    print(f"  inputs: {len(manifest.inputs)}, outputs: {len(manifest.outputs)}")
    print(f"  processing: {style} ({steps})")
    return 0


# --- report -----------------------------------------------------------------------


def cmd_report(args) -> int:
    try:
        sets = [trace.load_trace(p) for p in args.traces]
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ConfigError(f"unreadable trace file: {e}") from e
    merged = sets[0] if len(sets) == 1 else trace.merge_leveled_runs(sets)
    run_id = merged.run_ids()[0]
    aligned = trace.align_levels(merged, run_id)

    roots = aligned.roots()
    total = sum(s.duration for s in roots)
    print(f"run {run_id}: {len(aligned.spans)} spans, "
          f"{len(roots)} model spans, {total / 1e6:.3f} ms total")
    for root in roots[: args.max_spans]:
        print(f"  model [{root.start}..{root.end}] {root.duration / 1e6:.3f} ms")
        for layer in aligned.children(root.span_id):
            print(f"    {layer.name}: {layer.duration / 1e6:.3f} ms")
            for kern in aligned.children(layer.span_id):
                print(f"      {kern.name}: {kern.duration / 1e6:.3f} ms")
    if len(roots) > args.max_spans:
        print(f"  ... {len(roots) - args.max_spans} more model spans")
    if aligned.orphan_ids:
        print(f"  orphans: {sorted(aligned.orphan_ids)}")

    top = trace.top_k_layers(merged, args.top_k, run_id)
    print(f"top-{args.top_k} layers:")
    for name, duration in top:
        print(f"  {name}  {duration / 1e6:.3f} ms")

    if args.csv_out:
        with open(args.csv_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "layer", "duration_ns"])
            for rank, (name, duration) in enumerate(top, start=1):
                writer.writerow([rank, name, duration])
        print(f"csv written to {args.csv_out}")
    if args.figures_dir:
        fig_dir = Path(args.figures_dir)
        fig_dir.mkdir(parents=True, exist_ok=True)
        if top:
            figures.save_layer_bars(top, fig_dir / "top_layers.png")
        figures.save_span_timeline(aligned, fig_dir / "timeline.png")
        print(f"figures written to {fig_dir}")
    return 0


# --- plotdata ---------------------------------------------------------------------


def cmd_plotdata(args) -> int:
    rows: list[tuple[str, str, str, str, float]] = []
    for path in args.reports:
        report = metrics.parse_report(Path(path).read_text(encoding="utf-8"))
        rows.extend(metrics.report_rows(report))
    out = open(args.csv_out, "w", newline="", encoding="utf-8") if args.csv_out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["model", "system", "scenario", "metric", "value"])
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
            print(f"csv written to {args.csv_out}")
    if args.figures_dir:
        written = figures.save_metric_bars(rows, args.figures_dir)
        print(f"{len(written)} figures written to {args.figures_dir}")
    return 0


# --- gen-dataset ------------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    if args.kind == "logits":
        samples, labels = ds.generate_classification_dataset(
            args.count, args.classes, args.seed
        )
        ds.save_dataset(args.out, samples)
        if args.labels_out:
            ds.save_labels(args.labels_out, labels)
            print(f"{args.count} logit samples -> {args.out}, labels -> {args.labels_out}")
        else:
            print(f"{args.count} logit samples -> {args.out}")
    else:
        samples = ds.generate_image_dataset(
            args.count, args.height, args.width, args.channels, args.seed
        )
        ds.save_dataset(args.out, samples)
        print(f"{args.count} {args.height}x{args.width}x{args.channels} images -> {args.out}")
    return 0


# --- argument wiring --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infbench",
        description="scenario-driven inference benchmarking harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one benchmark scenario")
    run.add_argument("--manifest", required=True)
    run.add_argument("--dataset", required=True)
    run.add_argument("--labels")
    run.add_argument("--scenario", required=True, choices=sorted(_SCENARIO_NAMES))
    run.add_argument("--qps", type=float, help="target arrival rate (server)")
    run.add_argument("--samples-per-query", type=int, help="samples per query (multistream)")
    run.add_argument("--min-query-count", type=int, default=1024)
    run.add_argument("--min-duration-ms", type=int, default=10_000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mode", choices=("performance", "accuracy"), default="performance")
    run.add_argument("--clock", choices=("real", "virtual"), default="real")
    run.add_argument("--trace-level", choices=("model", "layer", "kernel"), default="model")
    run.add_argument("--out", default="report.json")
    run.add_argument("--trace-out")
    run.add_argument("--offline-count", type=int,
                     help="samples in the offline query (default: whole dataset)")
    run.add_argument("--system", default="local", help="system label embedded in the report")
    run.add_argument("--cache-dir", default=".infbench-cache")
    run.add_argument("--worker-timeout-s", type=float, default=30.0)
    run.add_argument("--backend-latency", default="constant:10ms",
                     help="constant:10ms | uniform:5ms,15ms | exponential:5ms")
    run.add_argument("--backend-behavior", default="identity",
                     choices=("identity", "lookup_label", "corrupted_lookup"))
    run.add_argument("--backend-seed", type=int)
    run.add_argument("--error-rate", type=float, default=0.0)
    run.add_argument("--max-concurrency", type=int, default=1)
    run.add_argument("--layer-fractions", default="0.6,0.3,0.1")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="validate a manifest")
    val.add_argument("--manifest", required=True)
    val.set_defaults(func=cmd_validate)

    rep = sub.add_parser("report", help="summarize trace files")
    rep.add_argument("traces", nargs="+", help="trace JSON files (several merge as leveled runs)")
    rep.add_argument("--top-k", type=int, default=3)
    rep.add_argument("--max-spans", type=int, default=5,
                     help="model spans to expand in the hierarchy listing")
    rep.add_argument("--csv-out")
    rep.add_argument("--figures-dir")
    rep.set_defaults(func=cmd_report)

    plot = sub.add_parser("plotdata", help="flatten reports into plot-ready CSV")
    plot.add_argument("reports", nargs="*", help="report JSON files")
    plot.add_argument("--csv-out")
    plot.add_argument("--figures-dir")
    plot.set_defaults(func=cmd_plotdata)

    gen = sub.add_parser("gen-dataset", help="generate a synthetic dataset")
    gen.add_argument("--kind", choices=("logits", "image"), default="logits")
    gen.add_argument("--count", type=int, default=64)
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--height", type=int, default=64)
    gen.add_argument("--width", type=int, default=64)
    gen.add_argument("--channels", type=int, default=3)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--labels-out")
    gen.set_defaults(func=cmd_gen_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, OSError) as e:
        return _fail(_exit_code_for(e), e)
    except Exception as e:  # any other failure is a runtime error, exit 2
        return _fail(2, e)


if __name__ == "__main__":
    sys.exit(main())
