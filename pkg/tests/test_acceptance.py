"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Run with `pytest tests/test_acceptance.py -v -s`."""

import json
import random
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from infbench.cli import main as cli_main
from infbench.clock import VirtualClock
from infbench.dataset import DatasetStore, generate_classification_dataset
from infbench.loadgen import (
    NS_PER_S,
    ScenarioConfig,
    percentile,
    poisson_offsets,
    run_multistream,
    run_offline,
    run_server,
    run_single_stream,
)
from infbench.metrics import summarize, top1_accuracy
from infbench.processor import BuiltinPipeline, CallablePipeline, compile_steps
from infbench.manifest import parse_manifest
from infbench.sut import (
    LatencyModel,
    LayerPlan,
    QuerySample,
    SimulatedBackend,
    SimulatedBackendConfig,
    Sut,
)
from infbench.tensor import ElementType, HookId, Tensor, decode_frame, encode_frame
from infbench.trace import Level, SpanRecorder, TraceSet, align_levels, top_k_layers

from .conftest import CONFORMANCE_DIR
from .test_loadgen import percentile_oracle
from .test_processor import normalize_oracle, resize_keep_aspect_oracle
from .test_trace import align_oracle

MS = 1_000_000


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def make_sut(n_samples=8, latency=LatencyModel.constant(10 * MS), clock=None,
             behavior="identity", pipeline=None, max_concurrency=1, recorder=None,
             backend_seed=0, store=None):
    if store is None:
        samples, labels = generate_classification_dataset(n_samples, 5, seed=1)
        store = DatasetStore(samples, labels)
    backend = SimulatedBackend(SimulatedBackendConfig(
        latency=latency, behavior=behavior, seed=backend_seed,
        max_concurrency=max_concurrency,
    ))
    pipeline = pipeline or BuiltinPipeline(())
    if not pipeline.started:
        pipeline.start()
    return Sut(store, pipeline, backend, clock or VirtualClock(), recorder)


def test_constant_latency_oracle():
    with criterion("constant-latency single-stream oracle"):
        cfg = ScenarioConfig("single_stream", min_query_count=1000, min_duration_ns=0)
        t0 = time.perf_counter()
        result = run_single_stream(cfg, make_sut())
        wall = time.perf_counter() - t0
        assert len(result.records) == 1000
        assert all(r.latency_ns == 10 * MS for r in result.records)
        latencies = [r.latency_ns for r in result.records]
        assert percentile(latencies, 90) == 10 * MS
        report = summarize(result.records, cfg, result.elapsed_ns)
        assert report.throughput_samples_per_s == 100.0
        assert wall < 1.0, f"virtual run took {wall:.2f}s of wall time"


def test_offline_throughput_identity():
    with criterion("offline throughput identity"):
        cfg = ScenarioConfig("offline", offline_sample_count=100)
        result = run_offline(cfg, make_sut(n_samples=100))
        assert result.elapsed_ns == NS_PER_S  # 1.0 s makespan
        report = summarize(result.records, cfg, result.elapsed_ns)
        assert report.throughput_samples_per_s == 100.0


def test_server_poisson_check():
    with criterion("server Poisson arrival semantics"):
        cfg = ScenarioConfig("server", target_qps=69.0, seed=1234,
                             min_query_count=100_000, min_duration_ns=0)
        offsets = poisson_offsets(cfg)
        assert len(offsets) == 100_000
        gaps = [b - a for a, b in zip([0] + offsets[:-1], offsets)]
        mean_gap = sum(gaps) / len(gaps)
        target_gap = NS_PER_S / 69.0
        assert abs(mean_gap - target_gap) / target_gap < 0.02
        # bit-identical across two scheduling passes
        assert poisson_offsets(cfg) == offsets

        # arrival stream independent of backend latency, via full runs
        run_cfg = ScenarioConfig("server", target_qps=69.0, seed=1234,
                                 min_query_count=2000, min_duration_ns=0)
        fast = run_server(run_cfg, make_sut(latency=LatencyModel.constant(0),
                                            max_concurrency=4))
        slow = run_server(run_cfg, make_sut(latency=LatencyModel.constant(50 * MS),
                                            max_concurrency=4))
        assert [r.scheduled_ns for r in fast.records] == \
               [r.scheduled_ns for r in slow.records] == offsets[:2000]


def test_multistream_reduction():
    with criterion("multistream latency and single-stream reduction"):
        cfg5 = ScenarioConfig("multistream", samples_per_query=5,
                              min_query_count=200, min_duration_ns=0)
        result = run_multistream(cfg5, make_sut(latency=LatencyModel.constant(2 * MS)))
        assert all(r.latency_ns == 10 * MS for r in result.records)
        assert percentile([r.latency_ns for r in result.records], 99) == 10 * MS

        latency = LatencyModel.uniform(1 * MS, 9 * MS)
        cfg1 = ScenarioConfig("multistream", samples_per_query=1, seed=5,
                              min_query_count=128, min_duration_ns=0)
        cfg_ss = ScenarioConfig("single_stream", seed=5,
                                min_query_count=128, min_duration_ns=0)
        r_ms = run_multistream(cfg1, make_sut(latency=latency, backend_seed=9))
        r_ss = run_single_stream(cfg_ss, make_sut(latency=latency, backend_seed=9))
        assert r_ms.records == r_ss.records


def test_percentile_oracle():
    with criterion("nearest-rank percentile vs sort oracle"):
        rng = np.random.default_rng(20240)
        for _ in range(1000):
            size = int(rng.integers(1, 10_001))
            values = rng.integers(0, 10**12, size=size).tolist()
            for p in (50, 90, 95, 99, 99.9, 100):
                assert percentile(values, p) == percentile_oracle(values, p)


def test_preprocess_exclusion():
    with criterion("preprocess cost excluded from latency"):
        def run(cost_ns):
            clock = VirtualClock()

            def pricey(ctx, data):
                clock.advance(cost_ns)
                return data

            pipeline = CallablePipeline({HookId.preprocess: pricey})
            cfg = ScenarioConfig("single_stream", min_query_count=100, min_duration_ns=0)
            return run_single_stream(cfg, make_sut(pipeline=pipeline, clock=clock)).records

        assert run(2 * MS) == run(200 * MS)


PIPELINE_TEXT = """\
name: oracle-model
version: 1.0.0
framework: {name: SimulatedRuntime, version: ^1.x}
inputs: [{type: image, element_type: uint8}]
outputs: [{type: label, element_type: float32}]
model: {graph_path: m.bin, graph_checksum: "%s"}
steps:
    decode: {element_type: uint8, data_layout: NHWC, color_layout: RGB}
    crop: {method: center, percentage: 87.5}
    resize: {dimensions: [3, 8, 8], method: bilinear, keep_aspect_ratio: true}
    mean: [127.5, 127.5, 127.5]
    rescale: 127.5
""" % ("ab" * 32)


def test_processing_pipeline_oracle():
    with criterion("image pipeline vs per-element oracle"):
        ops = compile_steps(parse_manifest(PIPELINE_TEXT).processing.built_in)
        rng = np.random.default_rng(77)
        for _ in range(100):
            h = int(rng.integers(10, 24))
            w = int(rng.integers(10, 24))
            img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            t = Tensor.from_numpy(img)
            for op in ops:
                t = op(t)
            x = img.astype(np.float32)
            h2, w2 = int(h * 0.875), int(w * 0.875)
            top, left = (h - h2) // 2, (w - w2) // 2
            x = x[top : top + h2, left : left + w2, :]
            x = resize_keep_aspect_oracle(x, 8, 8)
            x = normalize_oracle(x, [127.5] * 3, 127.5)
            assert np.all(np.abs(t.to_numpy() - x) <= 1e-5)
        # crop arithmetic at the published constants
        big = Tensor.from_numpy(np.zeros((256, 256, 3), dtype=np.uint8))
        from infbench.processor import builtin_center_crop
        assert builtin_center_crop(big, 87.5).shape == (224, 224, 3)


def _random_tensor(rng):
    dtype = ElementType(rng.randrange(7))
    shape = tuple(rng.randrange(4) for _ in range(rng.randrange(4)))
    count = 1
    for d in shape:
        count *= d
    if dtype is ElementType.string:
        return Tensor(dtype, shape, tuple(rng.randbytes(rng.randrange(8)) for _ in range(count)))
    return Tensor(dtype, shape, rng.randbytes(count * dtype.width))


def test_frame_protocol():
    with criterion("frame codec round-trip and conformance vectors"):
        rng = random.Random(424242)
        dtypes_seen = set()
        for _ in range(1000):
            tensors = [_random_tensor(rng) for _ in range(rng.randrange(4))]
            ctx = {f"k{i}": str(rng.random()) for i in range(rng.randrange(4))}
            hook = HookId(rng.randrange(6))
            dtypes_seen.update(t.dtype for t in tensors)
            frame = encode_frame(tensors, ctx, hook)
            assert decode_frame(frame) == (tensors, ctx, hook)
        assert dtypes_seen == set(ElementType), "all 7 dtypes must be exercised"

        requests = sorted(CONFORMANCE_DIR.glob("*.req.bin"))
        assert len(requests) >= 10, "conformance vectors must be checked in"
        for req_path in requests:
            resp_path = req_path.with_name(req_path.name.replace(".req.", ".resp."))
            tensors, ctx, hook = decode_frame(req_path.read_bytes())
            assert encode_frame(tensors, ctx, hook) == req_path.read_bytes()
            r_tensors, r_ctx, r_hook = decode_frame(resp_path.read_bytes())
            assert r_hook == hook and r_ctx == {}
            expected = tensors if hook in (HookId.preprocess, HookId.postprocess) else []
            assert r_tensors == expected
            assert encode_frame(r_tensors, r_ctx, r_hook) == resp_path.read_bytes()


def test_trace_alignment():
    with criterion("span alignment oracle and top-k layers"):
        rng = random.Random(31337)
        for _ in range(500):
            ts = TraceSet()
            ts.start_run("r", Level.kernel)
            spans = []
            for _ in range(rng.randrange(1, 25)):
                level = Level(rng.randrange(3))
                start = rng.randrange(200)
                span_end = start + rng.randrange(50)
                from infbench.trace import Span
                span = Span(ts.allocate_id(), "r", level, f"n{rng.randrange(6)}",
                            start, span_end)
                ts.record_span(span)
                spans.append(span)
            aligned = align_levels(ts, "r")
            expected = align_oracle(spans)
            got = {s.span_id: s.parent_id for s in aligned.spans if s.level != Level.model}
            assert got == expected

        cfg = SimulatedBackendConfig(
            latency=LatencyModel.constant(10 * MS),
            layer_plan=(LayerPlan("layer0", 0.6), LayerPlan("layer1", 0.3),
                        LayerPlan("layer2", 0.1)),
        )
        backend = SimulatedBackend(cfg, emit_level=Level.layer)
        ts = TraceSet()
        ts.start_run("r", Level.layer)
        _, drafts = backend.infer([], VirtualClock())
        SpanRecorder(ts, "r").record_drafts(drafts)
        top = top_k_layers(ts, 3)
        assert top == [("layer0", 6 * MS), ("layer1", 3 * MS), ("layer2", 1 * MS)]
        assert all(isinstance(name, str) and isinstance(d, int) for name, d in top)


def test_accuracy_mode():
    with criterion("accuracy mode top-1 semantics"):
        samples, labels = generate_classification_dataset(50, 10, seed=6)
        store = DatasetStore(samples, list(labels))
        cfg = ScenarioConfig("single_stream", mode="accuracy")
        result = run_single_stream(cfg, make_sut(store=store, behavior="lookup_label"))
        assert sorted(result.issued_indices) == list(range(50))
        predictions = [klass for _, klass in result.predictions]
        truth = [store.labels[idx] for idx, _ in result.predictions]
        assert top1_accuracy(predictions, truth).value == 1.0

        corrupted = list(labels)
        for i in range(5):
            corrupted[i] = (corrupted[i] + 1) % 10
        acc = top1_accuracy(predictions, [corrupted[idx] for idx, _ in result.predictions])
        assert acc.value == 0.900


def test_breakdown_consistency():
    with criterion("model/postprocess breakdown split"):
        post_cost = 3 * MS
        clock = VirtualClock()

        def sleepy_post(ctx, data):
            clock.advance(post_cost)
            return data

        pipeline = CallablePipeline({HookId.postprocess: sleepy_post})
        cfg = ScenarioConfig("single_stream", min_query_count=40, min_duration_ns=0)
        result = run_single_stream(cfg, make_sut(pipeline=pipeline, clock=clock))
        report = summarize(result.records, cfg, result.elapsed_ns)
        assert report.model_time_total_ns == sum(r.model_time_ns for r in result.records)
        assert report.post_time_total_ns == sum(r.post_time_ns for r in result.records)
        assert report.post_time_total_ns == len(result.records) * post_cost
        assert report.model_time_total_ns == len(result.records) * 10 * MS


def test_end_to_end_determinism(tmp_path, monkeypatch):
    with criterion("byte-identical reports and traces across reruns"):
        shutil.copytree(Path(__file__).parent.parent / "assets", tmp_path / "assets")
        monkeypatch.chdir(tmp_path)
        assert cli_main([
            "gen-dataset", "--kind", "logits", "--count", "12", "--classes", "4",
            "--seed", "42", "--out", "data.bin", "--labels-out", "labels.bin",
        ]) == 0
        args = [
            "run", "--manifest", "assets/manifests/identity.yaml",
            "--dataset", "data.bin", "--labels", "labels.bin",
            "--scenario", "single-stream", "--clock", "virtual", "--seed", "42",
            "--min-query-count", "32", "--min-duration-ms", "0",
            "--trace-level", "kernel", "--trace-out", "trace.json",
            "--out", "report.json",
        ]
        assert cli_main(args) == 0
        report1 = (tmp_path / "report.json").read_bytes()
        trace1 = (tmp_path / "trace.json").read_bytes()
        assert cli_main(args) == 0
        assert (tmp_path / "report.json").read_bytes() == report1
        assert (tmp_path / "trace.json").read_bytes() == trace1
        assert json.loads(report1)["seed"] == 42
