"""Leveled span recording, interval alignment, and cross-run merging.

Spans live on three levels (model > layer > kernel). A run records spans only
up to its enabled depth; deeper levels come from separate runs of the same
workload and are merged in, with child intervals rescaled onto the shallower
run's parent interval so that deep-profiling overhead never pollutes shallow
timings.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import LevelDisabled, WorkloadMismatch


class Level(enum.IntEnum):
    model = 0
    layer = 1
    kernel = 2

    @classmethod
    def from_name(cls, name: str) -> "Level":
        try:
            return cls[name]
        except KeyError:
            raise ValueError(f"unknown trace level {name!r}") from None


@dataclass(frozen=True)
class Span:
    span_id: int
    run_id: str
    level: Level
    name: str
    start: int
    end: int
    parent_id: int | None = None
    attributes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"span {self.name!r} has start {self.start} > end {self.end}")

    @property
    def duration(self) -> int:
        return self.end - self.start


class TraceSet:
    """Append-only span store; appends are safe from concurrent threads."""

    def __init__(self):
        self.spans: list[Span] = []
        self.max_levels: dict[str, Level] = {}
        self._lock = threading.Lock()
        self._next_id = 0

    def start_run(self, run_id: str, max_level: Level) -> None:
        self.max_levels[run_id] = Level(max_level)

    def allocate_id(self) -> int:
        with self._lock:
            sid = self._next_id
            self._next_id += 1
            return sid

    def record_span(self, span: Span) -> None:
        if span.run_id not in self.max_levels:
            raise LevelDisabled(f"run {span.run_id!r} was never started")
        if span.level > self.max_levels[span.run_id]:
            raise LevelDisabled(
                f"level {span.level.name} disabled for run {span.run_id!r} "
                f"(max {self.max_levels[span.run_id].name})"
            )
        with self._lock:
            self.spans.append(span)

    def run_spans(self, run_id: str) -> list[Span]:
        return [s for s in self.spans if s.run_id == run_id]

    def run_ids(self) -> list[str]:
        seen = dict.fromkeys(s.run_id for s in self.spans)
        for rid in self.max_levels:
            seen.setdefault(rid)
        return list(seen)


@dataclass(frozen=True)
class SpanDraft:
    """A span emitted by a backend before ids and run ownership are assigned."""

    level: Level
    name: str
    start: int
    end: int


class SpanRecorder:
    """Binds one run's identity to a trace set and files span drafts into it,
    silently dropping drafts below the run's enabled depth."""

    def __init__(self, traceset: TraceSet, run_id: str):
        self.traceset = traceset
        self.run_id = run_id

    @property
    def max_level(self) -> Level:
        return self.traceset.max_levels[self.run_id]

    def record_drafts(self, drafts: list[SpanDraft]) -> None:
        for d in drafts:
            if d.level > self.max_level:
                continue
            self.traceset.record_span(
                Span(
                    span_id=self.traceset.allocate_id(),
                    run_id=self.run_id,
                    level=d.level,
                    name=d.name,
                    start=d.start,
                    end=d.end,
                )
            )


@dataclass
class AlignedTrace:
    """Spans with parent links resolved; orphans are flagged, never dropped."""

    spans: list[Span]
    orphan_ids: set[int] = field(default_factory=set)

    def children(self, span_id: int) -> list[Span]:
        return [s for s in self.spans if s.parent_id == span_id]

    def roots(self) -> list[Span]:
        return [s for s in self.spans if s.level == Level.model]


def align_levels(traceset: TraceSet, run_id: str) -> AlignedTrace:
    """Fill parent links: each span's parent is the smallest span one level up
    whose interval contains it. Containerless spans are flagged orphans."""
    spans = traceset.run_spans(run_id)
    by_level: dict[Level, list[Span]] = {lv: [] for lv in Level}
    for s in spans:
        by_level[s.level].append(s)

    parent_of: dict[int, int | None] = {}
    orphans: set[int] = set()
    for child_level in (Level.layer, Level.kernel):
        parent_level = Level(child_level - 1)
        # Scanning candidates from shortest to longest makes the first
        # container found the smallest one; start breaks duration ties.
        candidates = sorted(by_level[parent_level], key=lambda s: (s.duration, s.start))
        for child in by_level[child_level]:
            parent = next(
                (p for p in candidates if p.start <= child.start and child.end <= p.end),
                None,
            )
            if parent is None:
                orphans.add(child.span_id)
                parent_of[child.span_id] = None
            else:
                parent_of[child.span_id] = parent.span_id

    aligned = [
        replace(s, parent_id=parent_of.get(s.span_id)) if s.level != Level.model else s
        for s in spans
    ]
    return AlignedTrace(aligned, orphans)


def _level_sequence(spans: list[Span], level: Level) -> list[str]:
    return [s.name for s in spans if s.level == level]


def _rescale(value: int, src: tuple[int, int], dst: tuple[int, int]) -> int:
    """Map a point affinely from the src interval onto the dst interval."""
    s0, s1 = src
    d0, d1 = dst
    if s1 == s0:
        return d0
    return d0 + round((value - s0) * (d1 - d0) / (s1 - s0))


def merge_leveled_runs(runs: list[TraceSet]) -> TraceSet:
    """Merge runs of the same workload profiled at increasing depth.

    Level-k spans come from the shallowest run enabling level k; children are
    matched to their parents across runs by (name, ordinal) and rescaled onto
    the merged parent's interval. Runs whose span name sequences disagree at a
    shared level are rejected.
    """
    if not runs:
        return TraceSet()
    sources: dict[Level, tuple[TraceSet, str]] = {}
    per_run: list[tuple[TraceSet, str, Level]] = []
    for ts in runs:
        ids = ts.run_ids()
        if len(ids) != 1:
            raise WorkloadMismatch(f"each input must hold exactly one run, got {ids}")
        rid = ids[0]
        per_run.append((ts, rid, ts.max_levels[rid]))

    for level in Level:
        for ts, rid, max_level in per_run:
            if level <= max_level and level not in sources:
                sources[level] = (ts, rid)

    # Shared levels must describe the same workload.
    for level in Level:
        sequences = [
            _level_sequence(ts.run_spans(rid), level)
            for ts, rid, max_level in per_run
            if level <= max_level
        ]
        for seq in sequences[1:]:
            if seq != sequences[0]:
                raise WorkloadMismatch(
                    f"runs disagree on the {level.name}-level span sequence"
                )

    merged_run_id = per_run[0][1]
    out = TraceSet()
    out.start_run(merged_run_id, max(lv for lv in sources))

    # (level, ordinal) -> merged span interval, for rescaling the next level.
    merged_intervals: dict[tuple[Level, int], tuple[int, int]] = {}
    merged_spans: list[Span] = []
    parent_ordinal: dict[tuple[Level, int], int | None] = {}

    for level in sorted(sources):
        ts, rid = sources[level]
        spans = [s for s in ts.run_spans(rid) if s.level == level]
        aligned = align_levels(ts, rid) if level > Level.model else None
        if aligned is not None:
            # ordinal of each parent span within its own run, for cross-run matching
            parents_in_source = [s for s in ts.run_spans(rid) if s.level == level - 1]
            ordinal_of_parent = {s.span_id: i for i, s in enumerate(parents_in_source)}
            aligned_by_id = {s.span_id: s for s in aligned.spans}
        for ordinal, span in enumerate(spans):
            if level == Level.model:
                start, end = span.start, span.end
                parent_ordinal[(level, ordinal)] = None
            else:
                src_parent_id = aligned_by_id[span.span_id].parent_id
                if src_parent_id is None:
                    start, end = span.start, span.end
                    parent_ordinal[(level, ordinal)] = None
                else:
                    p_ord = ordinal_of_parent[src_parent_id]
                    src_parent = next(
                        s for s in ts.run_spans(rid)
                        if s.span_id == src_parent_id
                    )
                    dst = merged_intervals[(Level(level - 1), p_ord)]
                    start = _rescale(span.start, (src_parent.start, src_parent.end), dst)
                    end = _rescale(span.end, (src_parent.start, src_parent.end), dst)
                    parent_ordinal[(level, ordinal)] = p_ord
            merged_intervals[(level, ordinal)] = (start, end)
            merged_spans.append(
                Span(0, merged_run_id, level, span.name, start, end,
                     attributes=span.attributes)
            )

    # Canonical ids: level-major, recording order within level.
    id_of: dict[tuple[Level, int], int] = {}
    final: list[Span] = []
    counter = 0
    ordinals: dict[Level, int] = {lv: 0 for lv in Level}
    for span in merged_spans:
        ordinal = ordinals[span.level]
        ordinals[span.level] += 1
        id_of[(span.level, ordinal)] = counter
        p_ord = parent_ordinal[(span.level, ordinal)]
        parent_id = None if p_ord is None else id_of[(Level(span.level - 1), p_ord)]
        final.append(replace(span, span_id=counter, parent_id=parent_id))
        counter += 1

    out.spans = final
    out._next_id = counter
    return out


def top_k_layers(traceset: TraceSet, k: int, run_id: str | None = None) -> list[tuple[str, int]]:
    """Most time-consuming layer spans (per span, not aggregated by name),
    sorted by descending duration with earlier start breaking ties."""
    if k <= 0:
        return []
    spans = traceset.spans if run_id is None else traceset.run_spans(run_id)
    layers = [s for s in spans if s.level == Level.layer]
    layers.sort(key=lambda s: (-s.duration, s.start))
    return [(s.name, s.duration) for s in layers[:k]]


# --- trace file I/O -------------------------------------------------------------

def save_trace(path: str | Path, traceset: TraceSet, run_id: str) -> None:
    """One JSON document per run: flat span array plus the enabled depth."""
    doc = {
        "run_id": run_id,
        "max_level": traceset.max_levels[run_id].name,
        "spans": [
            {
                "span_id": s.span_id,
                "run_id": s.run_id,
                "level": s.level.name,
                "name": s.name,
                "start": s.start,
                "end": s.end,
                "parent_id": s.parent_id,
                "attributes": dict(s.attributes),
            }
            for s in traceset.run_spans(run_id)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_trace(path: str | Path) -> TraceSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    ts = TraceSet()
    ts.start_run(doc["run_id"], Level.from_name(doc["max_level"]))
    max_id = -1
    for raw in doc["spans"]:
        span = Span(
            span_id=int(raw["span_id"]),
            run_id=raw["run_id"],
            level=Level.from_name(raw["level"]),
            name=raw["name"],
            start=int(raw["start"]),
            end=int(raw["end"]),
            parent_id=None if raw.get("parent_id") is None else int(raw["parent_id"]),
            attributes=tuple(sorted((raw.get("attributes") or {}).items())),
        )
        ts.record_span(span)
        max_id = max(max_id, span.span_id)
    ts._next_id = max_id + 1
    return ts
