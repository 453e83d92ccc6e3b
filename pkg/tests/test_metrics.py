import random

import pytest

from infbench.errors import EmptyInput, EmptyRun, LengthMismatch, ReportParseError
from infbench.loadgen import LatencyRecord, ScenarioConfig, percentile
from infbench.metrics import (
    parse_report,
    report_rows,
    report_to_dict,
    serialize_report,
    summarize,
    top1_accuracy,
)

MS = 1_000_000


def constant_records(n=100, latency=10 * MS, model=8 * MS, post=1 * MS):
    return [
        LatencyRecord(query_id=i, latency_ns=latency, sample_count=1,
                      model_time_ns=model, post_time_ns=post,
                      scheduled_ns=i * latency)
        for i in range(n)
    ]


def random_records(rng, n):
    out = []
    for i in range(n):
        model = rng.randrange(1, 10 * MS)
        post = rng.randrange(0, MS)
        out.append(LatencyRecord(
            query_id=i, latency_ns=model + post + rng.randrange(MS),
            sample_count=rng.randrange(1, 4), model_time_ns=model,
            post_time_ns=post, scheduled_ns=i, issue_delay_ns=rng.randrange(5),
        ))
    return out


class TestSummarize:
    def test_constant_latency_run(self):
        cfg = ScenarioConfig("single_stream", seed=1)
        report = summarize(constant_records(), cfg, elapsed_ns=1_000_000_000)
        assert report.throughput_samples_per_s == 100.0
        assert all(v == 10 * MS for v in report.percentiles_ns.values())
        assert report.headline_metric == "p90_ns"
        assert report.headline_value == 10 * MS
        assert report.query_count == 100

    def test_empty_run_rejected(self):
        with pytest.raises(EmptyRun):
            summarize([], ScenarioConfig("single_stream"), 1)

    def test_breakdown_totals_are_sums(self):
        rng = random.Random(0)
        records = random_records(rng, 50)
        cfg = ScenarioConfig("multistream", samples_per_query=2)
        report = summarize(records, cfg, elapsed_ns=10**9)
        assert report.model_time_total_ns == sum(r.model_time_ns for r in records)
        assert report.post_time_total_ns == sum(r.post_time_ns for r in records)

    def test_percentiles_agree_with_loadgen_percentile(self):
        rng = random.Random(1)
        records = random_records(rng, 333)
        cfg = ScenarioConfig("server", target_qps=10.0)
        report = summarize(records, cfg, elapsed_ns=10**9, achieved_qps=9.5)
        latencies = [r.latency_ns for r in records]
        for point, value in report.percentiles_ns.items():
            assert value == percentile(latencies, float(point))

    def test_throughput_is_samples_over_elapsed(self):
        records = constant_records(7, latency=3 * MS, model=2 * MS, post=1 * MS)
        cfg = ScenarioConfig("single_stream")
        report = summarize(records, cfg, elapsed_ns=21 * MS)
        assert report.throughput_samples_per_s == 7 / (21 * MS / 1e9)

    def test_pure_function_bit_identical(self):
        rng = random.Random(2)
        records = random_records(rng, 64)
        cfg = ScenarioConfig("offline", offline_sample_count=64)
        a = summarize(records, cfg, elapsed_ns=5 * 10**8, model="m", system="s")
        b = summarize(records, cfg, elapsed_ns=5 * 10**8, model="m", system="s")
        assert a == b
        assert serialize_report(a) == serialize_report(b)


class TestTop1Accuracy:
    def test_identity_predictions(self):
        labels = list(range(50))
        result = top1_accuracy(labels, labels)
        assert result.correct == 50 and result.value == 1.0
        assert result.metric_name == "top1"

    def test_five_of_fifty_corrupted(self):
        labels = [i % 7 for i in range(50)]
        predictions = list(labels)
        for i in range(5):
            predictions[i] = (predictions[i] + 1) % 7
        result = top1_accuracy(predictions, labels)
        assert result.correct == 45
        assert result.value == 0.9

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            top1_accuracy([1, 2], [1])

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            top1_accuracy([], [])

    def test_permutation_invariant(self):
        rng = random.Random(3)
        pairs = [(rng.randrange(5), rng.randrange(5)) for _ in range(200)]
        base = top1_accuracy([p for p, _ in pairs], [l for _, l in pairs])
        rng.shuffle(pairs)
        shuffled = top1_accuracy([p for p, _ in pairs], [l for _, l in pairs])
        assert base.correct == shuffled.correct


def random_report(rng, scenario):
    cfg_kwargs = {
        "offline": {"offline_sample_count": 10},
        "server": {"target_qps": 50.0},
        "multistream": {"samples_per_query": 4},
        "single_stream": {},
    }[scenario]
    cfg = ScenarioConfig(scenario, seed=rng.randrange(100), **cfg_kwargs)
    records = random_records(rng, rng.randrange(1, 40))
    return summarize(
        records, cfg, elapsed_ns=rng.randrange(1, 10**10),
        model=f"m{rng.randrange(3)}", system="sysA",
        achieved_qps=49.5 if scenario == "server" else None,
        accuracy=rng.random() if rng.random() < 0.5 else None,
    )


class TestReportSerialization:
    def test_round_trip_random_reports(self):
        rng = random.Random(4)
        for scenario in ("offline", "single_stream", "server", "multistream"):
            for _ in range(10):
                report = random_report(rng, scenario)
                assert parse_report(serialize_report(report)) == report

    def test_scenario_shaped_keys(self):
        rng = random.Random(5)
        assert "offline_samples_per_s" in report_to_dict(random_report(rng, "offline"))
        assert "p90_ns" in report_to_dict(random_report(rng, "single_stream"))
        server_doc = report_to_dict(random_report(rng, "server"))
        assert "p99_ns" in server_doc and "achieved_qps" in server_doc
        ms_doc = report_to_dict(random_report(rng, "multistream"))
        assert "p99_ns" in ms_doc and "samples_per_query" in ms_doc

    def test_unknown_key_rejected_by_name(self):
        rng = random.Random(6)
        text = serialize_report(random_report(rng, "single_stream"))
        broken = text.replace('"model":', '"bogus_key":', 1)
        with pytest.raises(ReportParseError, match="bogus_key"):
            parse_report(broken)

    def test_malformed_json_rejected(self):
        with pytest.raises(ReportParseError):
            parse_report("{not json")

    def test_serialized_form_is_newline_terminated(self):
        rng = random.Random(7)
        assert serialize_report(random_report(rng, "offline")).endswith("\n")


class TestReportRows:
    def test_two_reports_double_the_rows(self):
        rng = random.Random(8)
        a = random_report(rng, "single_stream")
        b = random_report(rng, "single_stream")
        rows_a, rows_b = report_rows(a), report_rows(b)
        joint = rows_a + rows_b
        fixed_metrics = {m for _, _, _, m, _ in rows_a if m != "accuracy"}
        assert len(joint) >= 2 * len(fixed_metrics)
        assert all(len(row) == 5 for row in joint)

    def test_rows_tagged_per_scenario(self):
        rng = random.Random(9)
        rows = report_rows(random_report(rng, "server")) + report_rows(
            random_report(rng, "offline")
        )
        scenarios = {row[2] for row in rows}
        assert scenarios == {"server", "offline"}
