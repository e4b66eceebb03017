import json

import pytest

from gpurel.core import DAY
from gpurel.failure_stats import UnsortedInputError, attribute_failures
from gpurel.simulator import ClusterConfig, run_simulation
from gpurel.trace_io import (
    TraceFormatError,
    digest,
    dumps,
    from_sim,
    loads,
    read_trace,
    read_workload,
    write_trace,
    write_workload,
)
from gpurel.workload import WorkloadConfig, generate_workload


@pytest.fixture(scope="module")
def sim_trace():
    jobs = generate_workload(WorkloadConfig(job_count=1000, seed=2, arrival_rate=1 / 60))
    jobs = [j for j in jobs if j.gpus <= 256]
    cfg = ClusterConfig(node_count=64, base_failure_rate=0.02, lemon_fraction=0.05, lemon_multiplier=5,
                        lemon_detection=True, horizon=15 * DAY)
    return run_simulation(cfg, jobs, seed=4)


def test_round_trip_1000_jobs(tmp_path, sim_trace):
    tf = from_sim(sim_trace)
    path = tmp_path / "t.jsonl"
    sha = write_trace(path, sim_trace)
    back = read_trace(path)
    assert back == tf
    assert back.attempts == sim_trace.attempts
    assert back.health_events == sim_trace.health_events
    assert back.end_time == sim_trace.end_time
    assert digest(back) == sha


def test_round_trip_text_is_stable(sim_trace):
    text = dumps(from_sim(sim_trace))
    assert dumps(loads(text)) == text


def test_workload_round_trip(tmp_path):
    jobs = generate_workload(WorkloadConfig(job_count=200, seed=1))
    write_workload(tmp_path / "w.jsonl", jobs)
    assert read_workload(tmp_path / "w.jsonl") == jobs


def test_truncated_file_names_line(sim_trace):
    text = dumps(from_sim(sim_trace, include_events=False))
    lines = text.splitlines()
    cut = "\n".join(lines[:10]) + "\n" + lines[10][: len(lines[10]) // 2]
    with pytest.raises(TraceFormatError, match="line 11"):
        loads(cut)


def test_version_mismatch():
    with pytest.raises(TraceFormatError, match="version"):
        loads(json.dumps({"type": "header", "schema": "gpurel-trace", "version": 99, "meta": {}}) + "\n")


def test_missing_header():
    with pytest.raises(TraceFormatError, match="line 1"):
        loads(json.dumps({"type": "job"}) + "\n")
    with pytest.raises(TraceFormatError, match="empty"):
        loads("")


def test_unknown_fields_and_records_preserved(sim_trace):
    lines = dumps(from_sim(sim_trace, include_events=False)).splitlines()
    i = next(k for k, l in enumerate(lines) if json.loads(l)["type"] == "health")
    rec = json.loads(lines[i])
    rec["vendor_code"] = "0x1f"
    lines[i] = json.dumps(rec, sort_keys=True)
    lines.insert(2, json.dumps({"type": "rack", "id": "r7"}))
    text = "\n".join(lines) + "\n"
    tf = loads(text)
    assert tf.unknown["health"][0] == {"vendor_code": "0x1f"}
    assert tf.other == [{"type": "rack", "id": "r7"}]
    again = dumps(tf)
    assert '"vendor_code": "0x1f"' in again
    assert loads(again) == tf


def test_out_of_order_accepted_on_read_rejected_downstream(sim_trace):
    tf = from_sim(sim_trace, include_events=False)
    tf.health_events = list(reversed(tf.health_events))
    back = loads(dumps(tf))
    assert back.health_events[0].time > back.health_events[-1].time
    with pytest.raises(UnsortedInputError):
        attribute_failures(back.attempts, back.health_events)


def test_header_carries_config_and_seed(sim_trace):
    header = json.loads(dumps(from_sim(sim_trace)).splitlines()[0])
    assert header["meta"]["seed"] == 4
    assert ClusterConfig.from_flat_dict(header["meta"]["config"]) == sim_trace.config
