"""JSONL trace files.

Line 1 is a header ``{"type": "header", "schema": "gpurel-trace", "version": 1, "meta": {...}}``.
Every following line is one JSON object with a ``type`` field:

``job``
    JobSpec fields, ``attempts`` (list of attempt objects) and, for
    simulated traces, ``outcome`` (``Q``, ``R``, ``U``, ``final_state``,
    ``censored``, ``extra``).
``health``
    ``node_id``, ``time``, ``check_kind``, ``severity``, ``is_false_positive``.
``node``
    ``node_id``, ``gpus``, ``base_failure_rate``, ``lemon_multiplier``.
``transition``
    ``time``, ``node_id``, ``state``, ``reason``.
``exclusion``
    ``time``, ``node_id``, ``job_id``.
``lemon_flag``
    ``time``, ``node_id``.
``event``
    ``time``, ``kind``, ``job_id``, ``node_id``, ``payload``.

Fields this module does not know are kept and written back unchanged;
records of unknown type are kept verbatim.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

from .core import (
    FailureCause,
    FailureRate,
    HealthCheckEvent,
    JobAttempt,
    JobRunRecord,
    JobSpec,
    JobState,
    Node,
    NodeState,
    Severity,
)

SCHEMA = "gpurel-trace"
VERSION = 1

_SPEC_FIELDS = [f.name for f in fields(JobSpec)]
_ATTEMPT_FIELDS = [f.name for f in fields(JobAttempt)]


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    time: float
    node_id: str
    state: NodeState
    reason: str = ""

    @property
    def counts_as_removal(self) -> bool:
        return self.state == NodeState.REMEDIATION


@dataclass
class TraceFile:
    meta: dict = field(default_factory=dict)
    specs: List[JobSpec] = field(default_factory=list)
    runs: List[Optional[JobRunRecord]] = field(default_factory=list)
    health_events: List[HealthCheckEvent] = field(default_factory=list)
    nodes: List[Node] = field(default_factory=list)
    node_transitions: List[Transition] = field(default_factory=list)
    exclusions: List[tuple] = field(default_factory=list)
    lemon_flags: List[tuple] = field(default_factory=list)
    events: List[dict] = field(default_factory=list)
    # unknown fields per (record type, index), and unknown record types
    unknown: Dict[str, Dict[int, dict]] = field(default_factory=dict)
    other: List[dict] = field(default_factory=list)

    @property
    def attempts(self) -> List[JobAttempt]:
        out = [a for r in self.runs if r is not None for a in r.attempts]
        out.sort(key=lambda a: (a.end_time, a.job_id, a.attempt_index))
        return out

    @property
    def end_time(self) -> float:
        if "end_time" in self.meta:
            return float(self.meta["end_time"])
        ts = [a.end_time for a in self.attempts] + [e.time for e in self.health_events]
        return max(ts, default=0.0)

    @property
    def start_time(self) -> float:
        return float(self.meta.get("start_time", 0.0))

    @property
    def ground_truth(self) -> Dict[str, bool]:
        return {n.node_id: n.is_lemon for n in self.nodes}

    def remediation_spans(self):
        from .simulator import RemediationSpan

        open_ = {}
        spans = []
        for x in self.node_transitions:
            if x.state == NodeState.REMEDIATION:
                open_[x.node_id] = x
            elif x.state == NodeState.AVAILABLE and x.node_id in open_:
                s = open_.pop(x.node_id)
                spans.append(RemediationSpan(x.node_id, s.time, x.time, s.reason))
        for n, s in sorted(open_.items()):
            spans.append(RemediationSpan(n, s.time, max(self.end_time, s.time), s.reason))
        return spans


# -- encoding ---------------------------------------------------------------


def _plain(v):
    if isinstance(v, (JobState, NodeState, Severity, FailureCause)):
        return v.value
    if isinstance(v, FailureRate):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if hasattr(v, "item"):  # numpy scalar
        return v.item()
    return v


def _job_record(spec: JobSpec, run: Optional[JobRunRecord]) -> dict:
    d = {"type": "job"}
    d.update({k: _plain(getattr(spec, k)) for k in _SPEC_FIELDS})
    if run is not None:
        d["attempts"] = [{k: _plain(getattr(a, k)) for k in _ATTEMPT_FIELDS if k not in ("job_id", "logical_run_id", "gpus")} for a in run.attempts]
        d["outcome"] = {
            "Q": run.Q,
            "R": run.R,
            "U": run.U,
            "final_state": run.final_state.value,
            "censored": run.censored,
            "extra": _plain(run.extra),
        }
    return d


def _records(tf: TraceFile):
    def with_unknown(kind, i, d):
        extra = tf.unknown.get(kind, {}).get(i)
        if extra:
            d = {**d, **extra}
        return d

    yield {"type": "header", "schema": SCHEMA, "version": VERSION, "meta": _plain(tf.meta)}
    for i, n in enumerate(tf.nodes):
        yield with_unknown("node", i, {
            "type": "node", "node_id": n.node_id, "gpus": n.gpus,
            "base_failure_rate": n.base_failure_rate.value, "lemon_multiplier": n.lemon_multiplier,
        })
    runs = tf.runs or [None] * len(tf.specs)
    for i, (s, r) in enumerate(zip(tf.specs, runs)):
        yield with_unknown("job", i, _job_record(s, r))
    for i, e in enumerate(tf.health_events):
        yield with_unknown("health", i, {"type": "health", **{k: _plain(v) for k, v in asdict(e).items()}})
    for i, x in enumerate(tf.node_transitions):
        yield with_unknown("transition", i, {"type": "transition", "time": x.time, "node_id": x.node_id, "state": x.state.value, "reason": x.reason})
    for i, (t, n, j) in enumerate(tf.exclusions):
        yield with_unknown("exclusion", i, {"type": "exclusion", "time": t, "node_id": n, "job_id": j})
    for i, (t, n) in enumerate(tf.lemon_flags):
        yield with_unknown("lemon_flag", i, {"type": "lemon_flag", "time": t, "node_id": n})
    for e in tf.events:
        yield {"type": "event", **_plain(e)}
    yield from tf.other


def dumps(tf: TraceFile) -> str:
    buf = io.StringIO()
    for rec in _records(tf):
        buf.write(json.dumps(rec, sort_keys=True, allow_nan=True))
        buf.write("\n")
    return buf.getvalue()


def write_trace(path, trace) -> str:
    """Write a TraceFile or SimTrace as JSONL; returns the sha256 of the bytes."""
    tf = trace if isinstance(trace, TraceFile) else from_sim(trace)
    text = dumps(tf)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return hashlib.sha256(text.encode()).hexdigest()


def digest(trace) -> str:
    tf = trace if isinstance(trace, TraceFile) else from_sim(trace)
    return hashlib.sha256(dumps(tf).encode()).hexdigest()


def from_sim(trace, meta: Optional[dict] = None, include_events: bool = True) -> TraceFile:
    """Convert a :class:`~gpurel.simulator.SimTrace` to a TraceFile."""
    from . import __version__

    by_id = {r.job_id: r for r in trace.runs}
    specs = list(getattr(trace, "specs", ()))
    m = {
        "tool_version": __version__,
        "seed": trace.seed,
        "config": trace.config.as_flat_dict(),
        "end_time": trace.end_time,
        "start_time": trace.start_time,
    }
    if meta:
        m.update(meta)
    return TraceFile(
        meta=m,
        specs=specs,
        runs=[by_id.get(s.job_id) for s in specs],
        health_events=list(trace.health_events),
        nodes=list(trace.nodes),
        node_transitions=[Transition(x.time, x.node_id, x.state, x.reason) for x in trace.node_transitions],
        exclusions=list(trace.exclusions),
        lemon_flags=list(trace.lemon_flags),
        events=[
            {"time": e.time, "kind": e.kind.value, "job_id": e.job_id, "node_id": e.node_id, "payload": e.payload}
            for e in trace.events
        ]
        if include_events
        else [],
    )


# -- decoding ---------------------------------------------------------------


def _take(d: dict, names):
    known = {k: d[k] for k in names if k in d}
    rest = {k: v for k, v in d.items() if k not in names and k != "type"}
    return known, rest


def _parse_job(d):
    spec_kw, rest = _take(d, _SPEC_FIELDS)
    spec = JobSpec(**spec_kw)
    attempts = rest.pop("attempts", None)
    outcome = rest.pop("outcome", None)
    run = None
    if attempts is not None or outcome is not None:
        outs = []
        for a in attempts or []:
            a = dict(a)
            a["end_state"] = JobState(a["end_state"])
            a["nodes"] = tuple(a.get("nodes", ()))
            outs.append(JobAttempt(job_id=spec.job_id, logical_run_id=spec.logical_run_id, gpus=spec.gpus, **a))
        o = outcome or {}
        run = JobRunRecord(
            logical_run_id=spec.logical_run_id,
            attempts=tuple(outs),
            Q=o.get("Q", 0.0),
            R=o.get("R", 0.0),
            U=o.get("U", 0.0),
            job_id=spec.job_id,
            gpus=spec.gpus,
            submit_time=spec.submit_time,
            final_state=JobState(o.get("final_state", outs[-1].end_state if outs else JobState.PENDING)),
            censored=o.get("censored", False),
            extra=o.get("extra", {}),
        )
    return spec, run, rest


def loads(text: str) -> TraceFile:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise TraceFormatError("line 1: empty file, expected header")
    tf = TraceFile()
    runs = []
    for no, line in enumerate(lines, start=1):
        try:
            d = json.loads(line)
            if not isinstance(d, dict) or "type" not in d:
                raise ValueError("record must be an object with a 'type' field")
        except ValueError as exc:
            raise TraceFormatError(f"line {no}: malformed record ({exc})") from None
        kind = d["type"]
        try:
            if no == 1:
                if kind != "header" or d.get("schema") != SCHEMA:
                    raise ValueError("first line must be a gpurel-trace header")
                if d.get("version") != VERSION:
                    raise TraceFormatError(f"line 1: schema version {d.get('version')!r} != supported {VERSION}")
                tf.meta = d.get("meta", {})
                continue
            if kind == "job":
                spec, run, rest = _parse_job(d)
                i = len(tf.specs)
                tf.specs.append(spec)
                runs.append(run)
            elif kind == "health":
                kw, rest = _take(d, ["node_id", "time", "check_kind", "severity", "is_false_positive"])
                i = len(tf.health_events)
                tf.health_events.append(
                    HealthCheckEvent(kw["node_id"], kw["time"], FailureCause(kw["check_kind"]), Severity(kw["severity"]), kw.get("is_false_positive", False))
                )
            elif kind == "node":
                kw, rest = _take(d, ["node_id", "gpus", "base_failure_rate", "lemon_multiplier"])
                i = len(tf.nodes)
                tf.nodes.append(Node(kw["node_id"], kw.get("gpus", 8), FailureRate(kw.get("base_failure_rate", 0.0)), kw.get("lemon_multiplier", 1.0)))
            elif kind == "transition":
                kw, rest = _take(d, ["time", "node_id", "state", "reason"])
                i = len(tf.node_transitions)
                tf.node_transitions.append(Transition(kw["time"], kw["node_id"], NodeState(kw["state"]), kw.get("reason", "")))
            elif kind == "exclusion":
                kw, rest = _take(d, ["time", "node_id", "job_id"])
                i = len(tf.exclusions)
                tf.exclusions.append((kw["time"], kw["node_id"], kw["job_id"]))
            elif kind == "lemon_flag":
                kw, rest = _take(d, ["time", "node_id"])
                i = len(tf.lemon_flags)
                tf.lemon_flags.append((kw["time"], kw["node_id"]))
            elif kind == "event":
                tf.events.append({k: v for k, v in d.items() if k != "type"})
                continue
            else:
                tf.other.append(d)
                continue
        except TraceFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"line {no}: invalid {kind} record ({exc!r})") from None
        if rest:
            tf.unknown.setdefault(kind, {})[i] = rest
    tf.runs = runs if any(r is not None for r in runs) else []
    return tf


def read_trace(path) -> TraceFile:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def write_workload(path, specs, meta: Optional[dict] = None) -> str:
    return write_trace(path, TraceFile(meta=dict(meta or {}), specs=list(specs)))


def read_workload(path) -> List[JobSpec]:
    return read_trace(path).specs
