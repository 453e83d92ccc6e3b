"""System Under Test: backend adapter contract, simulated backend, and the
query lifecycle around the processing pipeline.

The lifecycle mirrors the three wrappers every harness needs: preload and
preprocess samples (outside any latency measurement), answer queries (fetch
cached input, infer, postprocess, timestamp each stage), and free preloaded
memory. The simulated backend is a deterministic stand-in for a real
framework: seeded latency draws, label-driven outputs, and a configurable
layer/kernel span plan for profiling runs.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass

import numpy as np

from .clock import Clock
from .dataset import DatasetStore
from .errors import HarnessError, NotLoaded, QueryFailed
from .processor import Pipeline
from .tensor import HookId, Tensor
from .trace import Level, SpanDraft, SpanRecorder


@dataclass(frozen=True)
class QuerySample:
    query_id: int
    sample_index: int


@dataclass(frozen=True)
class QueryResponse:
    query_id: int
    sample_index: int
    outputs: list[Tensor]
    t_issue: int
    t_model_start: int
    t_model_end: int
    t_post_end: int

    def __post_init__(self):
        if not (self.t_issue <= self.t_model_start <= self.t_model_end <= self.t_post_end):
            raise ValueError(
                f"non-monotonic timestamps for query {self.query_id}: "
                f"{self.t_issue}, {self.t_model_start}, {self.t_model_end}, {self.t_post_end}"
            )


# --- latency models ---------------------------------------------------------------

@dataclass(frozen=True)
class LatencyModel:
    """constant(value) | uniform(low, high) | exponential(mean), all in ns."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "exponential"):
            raise ValueError(f"unknown latency model {self.kind!r}")
        want = {"constant": 1, "uniform": 2, "exponential": 1}[self.kind]
        if len(self.params) != want:
            raise ValueError(f"{self.kind} takes {want} parameter(s)")

    @classmethod
    def constant(cls, ns: float) -> "LatencyModel":
        return cls("constant", (float(ns),))

    @classmethod
    def uniform(cls, low_ns: float, high_ns: float) -> "LatencyModel":
        return cls("uniform", (float(low_ns), float(high_ns)))

    @classmethod
    def exponential(cls, mean_ns: float) -> "LatencyModel":
        return cls("exponential", (float(mean_ns),))

    def draw(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return int(self.params[0])
        if self.kind == "uniform":
            return int(rng.uniform(self.params[0], self.params[1]))
        # inverse transform keeps the stream reproducible across builds
        return int(-self.params[0] * math.log(1.0 - rng.random()))


@dataclass(frozen=True)
class LayerPlan:
    """One layer's share of the model latency plus its kernel sub-shares."""

    name: str
    fraction: float
    kernel_fractions: tuple[float, ...] = ()


@dataclass(frozen=True)
class SimulatedBackendConfig:
    latency: LatencyModel
    behavior: str = "identity"
    error_rate: float = 0.0
    seed: int = 0
    layer_plan: tuple[LayerPlan, ...] = ()
    max_concurrency: int = 1
    level_overhead_ns: int = 0

    def __post_init__(self):
        if self.behavior not in ("identity", "lookup_label", "corrupted_lookup"):
            raise ValueError(f"unknown behavior {self.behavior!r}")
        if not (0.0 <= self.error_rate <= 1.0):
            raise ValueError(f"error_rate must be in [0, 1], got {self.error_rate}")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be positive")
        if self.layer_plan:
            total = sum(lp.fraction for lp in self.layer_plan)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"layer fractions sum to {total}, not 1")
            for lp in self.layer_plan:
                if lp.kernel_fractions:
                    ktotal = sum(lp.kernel_fractions)
                    if abs(ktotal - 1.0) > 1e-9:
                        raise ValueError(
                            f"kernel fractions of {lp.name!r} sum to {ktotal}, not 1"
                        )


def _subdivide(start: int, end: int, fractions: list[float]) -> list[tuple[int, int]]:
    """Split [start, end] into abutting intervals at cumulative fractions."""
    duration = end - start
    edges = [start]
    acc = 0.0
    for frac in fractions:
        acc += frac
        edges.append(start + round(duration * acc))
    edges[-1] = end
    return list(zip(edges[:-1], edges[1:]))


class SimulatedBackend:
    """Deterministic test double: draws latency from its seeded generator,
    sleeps the clock, and emits a span tree per its layer plan.

    ``emit_level`` bounds how deep the emitted span tree goes; deeper
    profiling optionally inflates latency by level_overhead_ns per extra
    level, which is what makes leveled run merging worth doing.
    """

    def __init__(self, cfg: SimulatedBackendConfig, emit_level: Level = Level.model):
        self.cfg = cfg
        self.emit_level = Level(emit_level)
        self.max_concurrency = cfg.max_concurrency
        self._lat_rng = random.Random(f"{cfg.seed}|latency")
        self._beh_rng = random.Random(f"{cfg.seed}|behavior")
        self._lock = threading.Lock()

    def _outputs(self, inputs: list[Tensor]) -> list[Tensor]:
        if self.cfg.behavior == "identity":
            return list(inputs)
        outputs = []
        for t in inputs:
            flat = t.to_numpy().ravel()
            label = int(np.argmax(flat))
            if self.cfg.behavior == "corrupted_lookup" and self.cfg.error_rate > 0:
                if self._beh_rng.random() < self.cfg.error_rate:
                    label = (label + 1) % max(1, flat.size)
            logits = np.zeros(max(1, flat.size), dtype=np.float32)
            logits[label] = 1.0
            outputs.append(Tensor.from_numpy(logits))
        return outputs

    def infer(self, inputs: list[Tensor], clock: Clock) -> tuple[list[Tensor], list[SpanDraft]]:
        with self._lock:
            latency = self.cfg.latency.draw(self._lat_rng)
            latency += self.cfg.level_overhead_ns * int(self.emit_level)
            outputs = self._outputs(inputs)
        t0 = clock.now()
        clock.sleep_until(t0 + latency)
        t1 = clock.now()

        drafts = [SpanDraft(Level.model, "model", t0, t1)]
        if self.emit_level >= Level.layer and self.cfg.layer_plan:
            layer_bounds = _subdivide(t0, t1, [lp.fraction for lp in self.cfg.layer_plan])
            for lp, (ls, le) in zip(self.cfg.layer_plan, layer_bounds):
                drafts.append(SpanDraft(Level.layer, lp.name, ls, le))
                if self.emit_level >= Level.kernel and lp.kernel_fractions:
                    for j, (ks, ke) in enumerate(
                        _subdivide(ls, le, list(lp.kernel_fractions))
                    ):
                        drafts.append(SpanDraft(Level.kernel, f"{lp.name}.k{j}", ks, ke))
        return outputs, drafts


def predicted_class(outputs: list[Tensor]) -> int:
    """Class id from a response: single-element tensors are the id itself,
    anything longer is an argmax over the flattened values."""
    flat = outputs[0].to_numpy().ravel()
    if flat.size == 1:
        return int(flat[0])
    return int(np.argmax(flat))


class Sut:
    """Dataset + pipeline + backend behind the three-wrapper query lifecycle."""

    def __init__(
        self,
        store: DatasetStore,
        pipeline: Pipeline,
        backend,
        clock: Clock,
        recorder: SpanRecorder | None = None,
    ):
        self.store = store
        self.pipeline = pipeline
        self.backend = backend
        self.clock = clock
        self.recorder = recorder
        self.preload_ns = 0
        self._record_lock = threading.Lock()

    @property
    def max_concurrency(self) -> int:
        return getattr(self.backend, "max_concurrency", 1)

    def load_query_samples(self, indices: list[int]) -> None:
        """Preprocess and cache samples; this time never counts as query latency."""
        for index in indices:
            self.store.check_index(index)
        for index in indices:
            t0 = self.clock.now()
            tensors = self.pipeline.run_hook(HookId.preprocess, [self.store.samples[index]])
            self.preload_ns += self.clock.now() - t0
            self.store.preprocessed[index] = tensors

    def unload_query_samples(self, indices: list[int]) -> None:
        for index in indices:
            self.store.preprocessed.pop(index, None)

    def issue_query(
        self, samples: list[QuerySample], clock: Clock | None = None
    ) -> list[QueryResponse]:
        """Run each sample through infer + postprocess, timestamping every stage."""
        clk = clock if clock is not None else self.clock
        for s in samples:
            if s.sample_index not in self.store.preprocessed:
                raise NotLoaded(f"sample {s.sample_index} is not loaded")
        t_issue = clk.now()
        responses = []
        for s in samples:
            inputs = self.store.preprocessed[s.sample_index]
            try:
                t_model_start = clk.now()
                outputs, drafts = self.backend.infer(inputs, clk)
                t_model_end = clk.now()
                outputs = self.pipeline.run_hook(HookId.postprocess, outputs)
                t_post_end = clk.now()
            except HarnessError as e:
                raise QueryFailed(s.query_id, e) from e
            if self.recorder is not None:
                with self._record_lock:
                    self.recorder.record_drafts(drafts)
            responses.append(
                QueryResponse(
                    query_id=s.query_id,
                    sample_index=s.sample_index,
                    outputs=outputs,
                    t_issue=t_issue,
                    t_model_start=t_model_start,
                    t_model_end=t_model_end,
                    t_post_end=t_post_end,
                )
            )
        return responses
