"""Scenario engines generating query traffic and per-query latency records.

Four scenarios:

* offline        : one bulk query over many samples; throughput is the story.
* single-stream  : 1-sample queries back to back (closed loop).
* multistream    : N-sample queries back to back (closed loop).
* server         : 1-sample queries at Poisson arrival times (open loop);
                   the arrival schedule depends only on (seed, target_qps),
                   never on how fast the backend answers.

Closed-loop runs end once both the minimum query count and minimum duration
are met; accuracy mode instead issues every dataset index exactly once. With
a virtual clock the server scenario is simulated as a deterministic event
queue ordered by (time, sequence number); with a real clock it dispatches
onto a thread pool bounded by the adapter's concurrency.
"""

from __future__ import annotations

import heapq
import math
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

from .clock import VirtualClock
from .errors import ConfigError, EmptyInput
from .sut import QuerySample, Sut, predicted_class

NS_PER_S = 1_000_000_000

SCENARIOS = ("offline", "single_stream", "server", "multistream")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int = 0
    mode: str = "performance"
    min_query_count: int = 1024
    min_duration_ns: int = 10 * NS_PER_S
    target_qps: float | None = None
    samples_per_query: int | None = None
    offline_sample_count: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.mode not in ("performance", "accuracy"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        required = {
            "server": "target_qps",
            "multistream": "samples_per_query",
            "offline": "offline_sample_count",
        }
        for scenario, fname in required.items():
            value = getattr(self, fname)
            if self.scenario == scenario and value is None:
                raise ConfigError(f"{scenario} requires {fname}")
            if self.scenario != scenario and value is not None:
                raise ConfigError(f"{fname} only applies to the {scenario} scenario")
        if self.target_qps is not None and self.target_qps <= 0:
            raise ConfigError("target_qps must be positive")
        if self.samples_per_query is not None and self.samples_per_query < 1:
            raise ConfigError("samples_per_query must be at least 1")
        if self.offline_sample_count is not None and self.offline_sample_count < 1:
            raise ConfigError("offline_sample_count must be at least 1")
        if self.min_query_count < 1:
            raise ConfigError("min_query_count must be at least 1")


@dataclass(frozen=True)
class LatencyRecord:
    """Per-query timing: latency spans issue to the last postprocessed sample;
    scheduled/issue_delay capture open-loop arrival bookkeeping (offsets are
    relative to the run start)."""

    query_id: int
    latency_ns: int
    sample_count: int
    model_time_ns: int
    post_time_ns: int
    scheduled_ns: int = 0
    issue_delay_ns: int = 0

    def __post_init__(self):
        if min(self.latency_ns, self.sample_count, self.model_time_ns,
               self.post_time_ns, self.scheduled_ns, self.issue_delay_ns) < 0:
            raise ValueError(f"negative field in latency record {self.query_id}")
        if self.latency_ns < self.model_time_ns:
            raise ValueError(
                f"query {self.query_id}: latency {self.latency_ns} < "
                f"model time {self.model_time_ns}"
            )


@dataclass
class RunResult:
    scenario: str
    records: list[LatencyRecord]
    elapsed_ns: int
    issued_indices: list[int] = field(default_factory=list)
    predictions: list[tuple[int, int]] = field(default_factory=list)
    achieved_qps: float | None = None
    scheduled_qps: float | None = None
    max_issue_delay_ns: int = 0


def percentile(values: list[int], p: float) -> int:
    """Nearest-rank percentile: the value at 1-based index ceil(p/100 * n) of
    the ascending sort. Exact rational arithmetic avoids float-rank drift."""
    if not values:
        raise EmptyInput("percentile of an empty list")
    if not (0 < p <= 100):
        raise ValueError(f"percentile p must be in (0, 100], got {p}")
    ordered = sorted(values)
    rank = math.ceil(Fraction(str(p)) * len(ordered) / 100)
    return ordered[rank - 1]


def _make_record(
    query_id: int,
    responses,
    t_start: int,
    scheduled_ns: int | None = None,
    issue_delay_ns: int = 0,
) -> LatencyRecord:
    t_issue = responses[0].t_issue
    return LatencyRecord(
        query_id=query_id,
        latency_ns=max(r.t_post_end for r in responses) - t_issue,
        sample_count=len(responses),
        model_time_ns=sum(r.t_model_end - r.t_model_start for r in responses),
        post_time_ns=sum(r.t_post_end - r.t_model_end for r in responses),
        scheduled_ns=scheduled_ns if scheduled_ns is not None else t_issue - t_start,
        issue_delay_ns=issue_delay_ns,
    )


def _collect(result: RunResult, cfg: ScenarioConfig, responses) -> None:
    for r in responses:
        result.issued_indices.append(r.sample_index)
        if cfg.mode == "accuracy":
            result.predictions.append((r.sample_index, predicted_class(r.outputs)))


def _require_samples(sut: Sut) -> int:
    n = len(sut.store)
    if n == 0:
        raise ConfigError("dataset has no samples")
    return n


def run_offline(cfg: ScenarioConfig, sut: Sut) -> RunResult:
    """Load everything, issue one bulk query, measure the makespan."""
    n = _require_samples(sut)
    count = n if cfg.mode == "accuracy" else cfg.offline_sample_count
    if cfg.mode != "accuracy" and count > n:
        raise ConfigError(f"offline_sample_count {count} exceeds dataset size {n}")
    sut.load_query_samples(list(range(n)))
    try:
        result = RunResult(cfg.scenario, [], 0)
        t_start = sut.clock.now()
        samples = [QuerySample(0, i % n) for i in range(count)]
        responses = sut.issue_query(samples)
        _collect(result, cfg, responses)
        result.records.append(_make_record(0, responses, t_start))
        result.elapsed_ns = max(r.t_post_end for r in responses) - t_start
        return result
    finally:
        sut.unload_query_samples(list(range(n)))


def _run_closed_loop(cfg: ScenarioConfig, sut: Sut, spq: int) -> RunResult:
    n = _require_samples(sut)
    sut.load_query_samples(list(range(n)))
    try:
        result = RunResult(cfg.scenario, [], 0)
        t_start = sut.clock.now()
        query_id = 0
        cursor = 0
        while True:
            if cfg.mode == "accuracy":
                if cursor >= n:
                    break
                indices = list(range(cursor, min(cursor + spq, n)))
            else:
                indices = [(cursor + j) % n for j in range(spq)]
            cursor += len(indices)
            samples = [QuerySample(query_id, idx) for idx in indices]
            responses = sut.issue_query(samples)
            _collect(result, cfg, responses)
            result.records.append(_make_record(query_id, responses, t_start))
            query_id += 1
            if cfg.mode == "performance":
                if (query_id >= cfg.min_query_count
                        and sut.clock.now() - t_start >= cfg.min_duration_ns):
                    break
        result.elapsed_ns = sut.clock.now() - t_start
        return result
    finally:
        sut.unload_query_samples(list(range(n)))


def run_single_stream(cfg: ScenarioConfig, sut: Sut) -> RunResult:
    """Sequential 1-sample queries; next issues when the previous completes."""
    return _run_closed_loop(cfg, sut, 1)


def run_multistream(cfg: ScenarioConfig, sut: Sut) -> RunResult:
    """Contiguous N-sample queries; per-query latency covers all its samples."""
    return _run_closed_loop(cfg, sut, cfg.samples_per_query)


def poisson_offsets(cfg: ScenarioConfig, count: int | None = None) -> list[int]:
    """Arrival offsets (ns from run start) with exponential inter-arrival gaps
    drawn by inverse transform from a generator seeded only by cfg.seed.

    With count=None, scheduling continues until both termination floors are
    met, exceeding neither by more than one arrival.
    """
    rng = random.Random(f"{cfg.seed}|arrivals")
    mean_gap_ns = NS_PER_S / cfg.target_qps
    offsets: list[int] = []
    t = 0
    while True:
        if count is not None:
            if len(offsets) >= count:
                break
        elif len(offsets) >= cfg.min_query_count and t >= cfg.min_duration_ns:
            break
        t += int(-mean_gap_ns * math.log(1.0 - rng.random()))
        offsets.append(t)
    return offsets


def run_server(cfg: ScenarioConfig, sut: Sut) -> RunResult:
    """Open loop: issue 1-sample queries at their scheduled Poisson arrival
    times, queueing past the adapter's concurrency limit."""
    n = _require_samples(sut)
    offsets = poisson_offsets(cfg, count=n if cfg.mode == "accuracy" else None)
    sut.load_query_samples(list(range(n)))
    try:
        if isinstance(sut.clock, VirtualClock):
            return _run_server_virtual(cfg, sut, offsets)
        return _run_server_threaded(cfg, sut, offsets)
    finally:
        sut.unload_query_samples(list(range(n)))


def _finish_server_result(result: RunResult, cfg, offsets, last_done: int, t_start: int):
    result.elapsed_ns = max(0, last_done - t_start)
    if result.elapsed_ns > 0:
        result.achieved_qps = len(result.records) / (result.elapsed_ns / NS_PER_S)
    result.scheduled_qps = len(offsets) / (offsets[-1] / NS_PER_S) if offsets[-1] else None
    result.max_issue_delay_ns = max((r.issue_delay_ns for r in result.records), default=0)
    return result


def _run_server_virtual(cfg: ScenarioConfig, sut: Sut, offsets: list[int]) -> RunResult:
    n = len(sut.store)
    result = RunResult(cfg.scenario, [], 0)
    clock = sut.clock
    t_start = clock.now()
    max_inflight = sut.max_concurrency

    # event heap ordered by (time, push sequence); payload is the query id
    events: list[tuple[int, int, str, int]] = []
    seq = 0
    for qid, off in enumerate(offsets):
        heapq.heappush(events, (t_start + off, seq, "arrival", qid))
        seq += 1

    in_flight = 0
    pending: list[int] = []
    last_done = t_start

    def issue(qid: int, now: int) -> int:
        nonlocal last_done
        cursor = VirtualClock(now)
        sample = QuerySample(qid, qid % n)
        responses = sut.issue_query([sample], clock=cursor)
        _collect(result, cfg, responses)
        scheduled = offsets[qid]
        result.records.append(
            _make_record(qid, responses, t_start, scheduled_ns=scheduled,
                         issue_delay_ns=now - (t_start + scheduled))
        )
        done = max(r.t_post_end for r in responses)
        last_done = max(last_done, done)
        return done

    while events:
        now, _, kind, qid = heapq.heappop(events)
        clock.sleep_until(now)
        if kind == "arrival":
            if in_flight < max_inflight:
                in_flight += 1
                done = issue(qid, now)
                heapq.heappush(events, (done, seq, "complete", qid))
                seq += 1
            else:
                pending.append(qid)
        else:
            in_flight -= 1
            if pending:
                next_qid = pending.pop(0)
                in_flight += 1
                done = issue(next_qid, now)
                heapq.heappush(events, (done, seq, "complete", next_qid))
                seq += 1

    result.records.sort(key=lambda r: r.query_id)
    clock.sleep_until(last_done)
    return _finish_server_result(result, cfg, offsets, last_done, t_start)


def _run_server_threaded(cfg: ScenarioConfig, sut: Sut, offsets: list[int]) -> RunResult:
    n = len(sut.store)
    result = RunResult(cfg.scenario, [], 0)
    clock = sut.clock
    t_start = clock.now()
    lock = threading.Lock()
    last_done = t_start

    def worker(qid: int) -> None:
        nonlocal last_done
        now = clock.now()
        responses = sut.issue_query([QuerySample(qid, qid % n)])
        scheduled = offsets[qid]
        record = _make_record(qid, responses, t_start, scheduled_ns=scheduled,
                              issue_delay_ns=max(0, now - (t_start + scheduled)))
        with lock:
            _collect(result, cfg, responses)
            result.records.append(record)
            last_done = max(last_done, max(r.t_post_end for r in responses))

    with ThreadPoolExecutor(max_workers=sut.max_concurrency) as pool:
        futures = []
        for qid, off in enumerate(offsets):
            clock.sleep_until(t_start + off)
            futures.append(pool.submit(worker, qid))
        for f in futures:
            f.result()

    result.records.sort(key=lambda r: r.query_id)
    return _finish_server_result(result, cfg, offsets, last_done, t_start)


def run_scenario(cfg: ScenarioConfig, sut: Sut) -> RunResult:
    runner = {
        "offline": run_offline,
        "single_stream": run_single_stream,
        "server": run_server,
        "multistream": run_multistream,
    }[cfg.scenario]
    return runner(cfg, sut)
