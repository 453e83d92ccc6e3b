"""Run summaries: throughput, percentile latencies, accuracy, and the
model/postprocess time breakdown, with canonical JSON serialization.

Reports embed the seed and the full scenario configuration so a published
number can always be regenerated from the file alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import EmptyInput, EmptyRun, LengthMismatch, ReportParseError
from .loadgen import LatencyRecord, ScenarioConfig, percentile

PERCENTILE_POINTS = ("50", "90", "95", "99", "99.9")

_HEADLINE = {
    "offline": "offline_samples_per_s",
    "single_stream": "p90_ns",
    "server": "p99_ns",
    "multistream": "p99_ns",
}


@dataclass(frozen=True)
class AccuracyResult:
    correct: int
    total: int
    metric_name: str = "top1"

    def __post_init__(self):
        if not (0 <= self.correct <= self.total):
            raise ValueError(f"correct {self.correct} outside 0..{self.total}")

    @property
    def value(self) -> float:
        return self.correct / self.total


@dataclass
class RunReport:
    scenario: str
    model: str
    system: str
    mode: str
    seed: int
    query_count: int
    sample_count: int
    elapsed_ns: int
    throughput_samples_per_s: float
    percentiles_ns: dict[str, int]
    model_time_total_ns: int
    post_time_total_ns: int
    headline_metric: str
    headline_value: float
    achieved_qps: float | None = None
    samples_per_query: int | None = None
    accuracy: float | None = None
    config: dict = field(default_factory=dict)


def summarize(
    records: list[LatencyRecord],
    cfg: ScenarioConfig,
    elapsed_ns: int,
    model: str = "",
    system: str = "local",
    achieved_qps: float | None = None,
    accuracy: float | None = None,
    extra_config: dict | None = None,
) -> RunReport:
    """Reduce a run's records to the scenario-appropriate report."""
    if not records:
        raise EmptyRun("cannot summarize a run with no records")
    sample_count = sum(r.sample_count for r in records)
    latencies = [r.latency_ns for r in records]
    pcts = {p: percentile(latencies, float(p)) for p in PERCENTILE_POINTS}
    throughput = sample_count / (elapsed_ns / 1e9) if elapsed_ns else float("inf")

    headline_metric = _HEADLINE[cfg.scenario]
    headline_value = (
        throughput if cfg.scenario == "offline"
        else float(pcts["90" if cfg.scenario == "single_stream" else "99"])
    )

    config = {k: v for k, v in asdict(cfg).items() if v is not None}
    config.update(extra_config or {})
    return RunReport(
        scenario=cfg.scenario,
        model=model,
        system=system,
        mode=cfg.mode,
        seed=cfg.seed,
        query_count=len(records),
        sample_count=sample_count,
        elapsed_ns=elapsed_ns,
        throughput_samples_per_s=throughput,
        percentiles_ns=dict(pcts),
        model_time_total_ns=sum(r.model_time_ns for r in records),
        post_time_total_ns=sum(r.post_time_ns for r in records),
        headline_metric=headline_metric,
        headline_value=headline_value,
        achieved_qps=achieved_qps if cfg.scenario == "server" else None,
        samples_per_query=cfg.samples_per_query,
        accuracy=accuracy,
        config=config,
    )


def top1_accuracy(predictions: list[int], labels: list[int]) -> AccuracyResult:
    """Count predictions equal to their reference label."""
    if len(predictions) != len(labels):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    if not predictions:
        raise EmptyInput("accuracy of zero pairs")
    correct = sum(1 for p, l in zip(predictions, labels) if p == l)
    return AccuracyResult(correct=correct, total=len(labels))


# --- serialization ----------------------------------------------------------------

_BASE_KEYS = (
    "scenario", "model", "system", "mode", "seed", "query_count", "sample_count",
    "elapsed_ns", "throughput_samples_per_s", "percentiles_ns",
    "model_time_total_ns", "post_time_total_ns", "headline_metric",
    "headline_value", "config",
)

_SCENARIO_KEYS = {
    "offline": ("offline_samples_per_s",),
    "single_stream": ("p90_ns",),
    "server": ("p99_ns", "achieved_qps"),
    "multistream": ("p99_ns", "samples_per_query"),
}


def report_to_dict(report: RunReport) -> dict:
    doc: dict = {}
    for key in _BASE_KEYS[:-1]:
        doc[key] = getattr(report, key)
    if report.scenario == "offline":
        doc["offline_samples_per_s"] = report.throughput_samples_per_s
    elif report.scenario == "single_stream":
        doc["p90_ns"] = report.percentiles_ns["90"]
    else:
        doc["p99_ns"] = report.percentiles_ns["99"]
    if report.scenario == "server":
        doc["achieved_qps"] = report.achieved_qps
    if report.scenario == "multistream":
        doc["samples_per_query"] = report.samples_per_query
    if report.accuracy is not None:
        doc["accuracy"] = report.accuracy
    doc["config"] = report.config
    return doc


def serialize_report(report: RunReport) -> str:
    """Canonical JSON: fixed key order, UTF-8, newline-terminated."""
    return json.dumps(report_to_dict(report), indent=2, sort_keys=False) + "\n"


def parse_report(text: str) -> RunReport:
    """Strict inverse of serialize_report; unknown keys are rejected by name."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ReportParseError(f"malformed report JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ReportParseError("report must be a JSON object")
    scenario = doc.get("scenario")
    if scenario not in _SCENARIO_KEYS:
        raise ReportParseError(f"unknown scenario {scenario!r}")
    allowed = set(_BASE_KEYS) | set(_SCENARIO_KEYS[scenario]) | {"accuracy"}
    for key in doc:
        if key not in allowed:
            raise ReportParseError(f"unknown report key {key!r}")
    missing = [k for k in _BASE_KEYS if k not in doc]
    if missing:
        raise ReportParseError(f"missing report keys {missing}")
    try:
        return RunReport(
            scenario=scenario,
            model=doc["model"],
            system=doc["system"],
            mode=doc["mode"],
            seed=int(doc["seed"]),
            query_count=int(doc["query_count"]),
            sample_count=int(doc["sample_count"]),
            elapsed_ns=int(doc["elapsed_ns"]),
            throughput_samples_per_s=float(doc["throughput_samples_per_s"]),
            percentiles_ns={k: int(v) for k, v in doc["percentiles_ns"].items()},
            model_time_total_ns=int(doc["model_time_total_ns"]),
            post_time_total_ns=int(doc["post_time_total_ns"]),
            headline_metric=doc["headline_metric"],
            headline_value=float(doc["headline_value"]),
            achieved_qps=doc.get("achieved_qps"),
            samples_per_query=doc.get("samples_per_query"),
            accuracy=doc.get("accuracy"),
            config=doc["config"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ReportParseError(f"bad report field: {e}") from e


def report_rows(report: RunReport) -> list[tuple[str, str, str, str, float]]:
    """(model, system, scenario, metric, value) rows for delimited output."""
    base = (report.model, report.system, report.scenario)
    rows = [
        base + ("throughput_samples_per_s", report.throughput_samples_per_s),
        base + ("query_count", float(report.query_count)),
        base + ("sample_count", float(report.sample_count)),
        base + ("model_time_total_ns", float(report.model_time_total_ns)),
        base + ("post_time_total_ns", float(report.post_time_total_ns)),
    ]
    for point in PERCENTILE_POINTS:
        rows.append(base + (f"p{point}_ns", float(report.percentiles_ns[point])))
    if report.achieved_qps is not None:
        rows.append(base + ("achieved_qps", report.achieved_qps))
    if report.samples_per_query is not None:
        rows.append(base + ("samples_per_query", float(report.samples_per_query)))
    if report.accuracy is not None:
        rows.append(base + ("accuracy", report.accuracy))
    return rows
