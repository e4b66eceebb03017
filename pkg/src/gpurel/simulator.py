"""Discrete-event simulator for a gang-scheduled, failure-prone GPU cluster.

One event loop, one seeded ``numpy`` generator. Ties on the event heap are
broken by (time, kind order, entity id, insertion sequence), so a given
(config, workload, seed) always replays to the same trace.

Modelled behaviour, in brief:

* gang scheduling on whole nodes, strict priority order with first-fit
  backfill; higher-priority jobs may preempt strictly lower-priority jobs
  that have run for at least ``min_preemption_age``;
* node failures are exponential in occupied time at each node's effective
  rate; the job ends NODE_FAIL at the failure instant and is requeued, the
  node goes straight to remediation, and the matching health check is
  logged at the next check tick (catch-all failures add the heartbeat delay);
* false-positive checks drain a node after its current job (LOW severity)
  or kill the job (HIGH severity);
* checkpoints every ``checkpoint_interval`` of productive time, each
  blocking for ``checkpoint_write_overhead``; restarts pay
  ``restart_overhead`` and resume from the last completed checkpoint;
* optional online lemon detection that drains flagged nodes and replaces
  them (multiplier reset to 1) when their repair finishes.
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from sortedcontainers import SortedList

from .core import (
    DAY,
    DEFAULT_MAX_LIFETIME,
    HOUR,
    MINUTE,
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
    as_rate,
    nodes_required,
)
from .lemon import DEFAULT_THRESHOLDS, SIGNALS, SignalTracker, Thresholds, classify_lemons

DEFAULT_CAUSE_WEIGHTS = {
    FailureCause.NODE_FAIL_CATCHALL: 0.30,
    FailureCause.IB_LINK: 0.15,
    FailureCause.FS_MOUNT: 0.15,
    FailureCause.GPU_MEMORY: 0.12,
    FailureCause.PCIE: 0.10,
    FailureCause.GPU_UNAVAILABLE: 0.08,
    FailureCause.NVLINK: 0.04,
    FailureCause.MAIN_MEMORY: 0.02,
    FailureCause.ETHLINK: 0.02,
    FailureCause.GPU_DRIVER: 0.01,
    FailureCause.SYSTEM_SERVICE: 0.01,
}

# Check kinds that tend to fire together on one fault.
COMPANION_CAUSE = {
    FailureCause.PCIE: FailureCause.GPU_UNAVAILABLE,
    FailureCause.GPU_UNAVAILABLE: FailureCause.PCIE,
    FailureCause.IB_LINK: FailureCause.GPU_UNAVAILABLE,
    FailureCause.GPU_MEMORY: FailureCause.GPU_UNAVAILABLE,
    FailureCause.NVLINK: FailureCause.GPU_UNAVAILABLE,
}


class SimEventKind(str, enum.Enum):
    SUBMIT = "SUBMIT"
    START = "START"
    NODE_FAILURE = "NODE_FAILURE"
    HEALTH_TICK = "HEALTH_TICK"
    CHECKPOINT_DONE = "CHECKPOINT_DONE"
    COMPLETE = "COMPLETE"
    PREEMPT = "PREEMPT"
    REQUEUE = "REQUEUE"
    NODE_REMEDIATED = "NODE_REMEDIATED"
    NODE_STATE = "NODE_STATE"
    LEMON_FLAG = "LEMON_FLAG"


@dataclass(frozen=True)
class SimEvent:
    time: float
    kind: SimEventKind
    job_id: Optional[str] = None
    node_id: Optional[str] = None
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NodeTransition:
    time: float
    node_id: str
    state: NodeState
    reason: str = ""

    @property
    def counts_as_removal(self) -> bool:
        return self.state == NodeState.REMEDIATION


@dataclass(frozen=True)
class RemediationSpan:
    node_id: str
    start: float
    end: float
    reason: str

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ClusterConfig:
    node_count: int = 128
    gpus_per_node: int = 8
    base_failure_rate: float = 6.5e-3  # per node-day
    lemon_fraction: float = 0.0
    lemon_multiplier: float = 1.0
    health_check_period: float = 5 * MINUTE
    heartbeat_timeout: float = 60.0
    false_positive_rate: float = 1e-5  # per node per check
    false_positive_severity: Severity = Severity.LOW
    false_positive_repair_time: float = 2 * HOUR
    min_preemption_age: float = 2 * HOUR
    max_job_lifetime: float = DEFAULT_MAX_LIFETIME
    requeue_on_node_fail: bool = True
    max_requeues: Optional[int] = None
    repair_time: float = 24 * HOUR
    co_occurrence_prob: float = 0.04
    user_exclusion_prob: float = 0.5
    cause_weights: Optional[Mapping] = None
    horizon: Optional[float] = None
    lemon_detection: bool = False
    lemon_thresholds: Thresholds = DEFAULT_THRESHOLDS
    lemon_window: float = 28 * DAY
    lemon_check_period: float = DAY
    lemon_repair_time: Optional[float] = None
    record_events: bool = True

    def __post_init__(self):
        if self.node_count < 1 or self.gpus_per_node < 1:
            raise ValueError("node_count and gpus_per_node must be >= 1")
        as_rate(self.base_failure_rate)
        if not 0.0 <= self.lemon_fraction < 1.0:
            raise ValueError("lemon_fraction must lie in [0, 1)")
        if self.lemon_multiplier < 1.0:
            raise ValueError("lemon_multiplier must be >= 1")
        if not 0.0 <= self.false_positive_rate < 1.0:
            raise ValueError("false_positive_rate must lie in [0, 1)")
        if self.health_check_period <= 0:
            raise ValueError("health_check_period must be > 0")
        for name in ("heartbeat_timeout", "min_preemption_age", "repair_time", "false_positive_repair_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        object.__setattr__(self, "false_positive_severity", Severity(self.false_positive_severity))
        if self.cause_weights is not None:
            w = {FailureCause(k): float(v) for k, v in dict(self.cause_weights).items()}
            if any(v < 0 for v in w.values()) or sum(w.values()) <= 0:
                raise ValueError("cause_weights must be non-negative with positive sum")
            # spelling out the defaults is the same config as leaving them unset
            object.__setattr__(self, "cause_weights", None if w == DEFAULT_CAUSE_WEIGHTS else w)

    @property
    def failure_rate(self) -> FailureRate:
        return as_rate(self.base_failure_rate)

    @property
    def weights(self) -> Dict[FailureCause, float]:
        return dict(self.cause_weights or DEFAULT_CAUSE_WEIGHTS)

    def as_flat_dict(self) -> dict:
        """Flat key/value form (the config-file schema)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "lemon_thresholds":
                out["lemon_rule"] = v.rule
                out["lemon_k"] = v.k
                out["lemon_set_id"] = v.set_id
                for s in SIGNALS:
                    if s in v.cutoffs:
                        out[f"lemon_threshold_{s}"] = v.cutoffs[s]
            elif f.name == "cause_weights":
                for c, w in sorted(self.weights.items(), key=lambda kv: kv[0].value):
                    out[f"cause_weight_{c.value}"] = w
            elif isinstance(v, enum.Enum):
                out[f.name] = v.value
            elif v is not None:
                out[f.name] = v
        return out

    @classmethod
    def from_flat_dict(cls, d: Mapping) -> "ClusterConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        kw = {}
        cutoffs = {}
        weights = {}
        rule = d.pop("lemon_rule", "any-of")
        k = int(d.pop("lemon_k", 1))
        set_id = d.pop("lemon_set_id", "config")
        for key, v in d.items():
            if key.startswith("lemon_threshold_"):
                cutoffs[key[len("lemon_threshold_") :]] = float(v)
            elif key.startswith("cause_weight_"):
                weights[key[len("cause_weight_") :]] = float(v)
            elif key in known and key not in ("lemon_thresholds", "cause_weights"):
                kw[key] = v
            else:
                raise ValueError(f"unknown config key {key!r}")
        if cutoffs:
            kw["lemon_thresholds"] = Thresholds(cutoffs, rule=rule, k=k, set_id=set_id)
        if weights:
            kw["cause_weights"] = weights
        return cls(**kw)


def attempt_duration(remaining: float, u0: float, dt: Optional[float], w: float) -> float:
    """Wallclock time for an uninterrupted attempt to finish ``remaining`` work."""
    if dt is None or remaining <= 0:
        return u0 + max(remaining, 0.0)
    writes = max(math.ceil(remaining / dt) - 1, 0)
    return u0 + remaining + writes * w


def attempt_progress(elapsed: float, u0: float, dt: Optional[float], w: float):
    """Checkpointed progress of an attempt interrupted after ``elapsed`` seconds.

    Returns (committed productive time, checkpoints written, wallclock offset
    of the last completed checkpoint or None).
    """
    tau = elapsed - u0
    if dt is None or tau <= 0:
        return 0.0, 0, None
    cycle = dt + w
    n = int(tau // cycle)
    if n == 0:
        return 0.0, 0, None
    return n * dt, n, u0 + n * cycle


# heap kind order: lower runs first at equal time
_K_REMEDIATED, _K_END, _K_FAILURE, _K_HEALTH, _K_FP, _K_LEMON, _K_SUBMIT, _K_WAKE = range(8)


class _Run:
    __slots__ = (
        "idx", "spec", "need", "key", "state", "enter", "committed", "Q", "R", "U", "attempts",
        "start", "nodes", "token", "requeues", "preemptions", "final", "eligible_key", "reason",
    )

    def __init__(self, idx: int, spec: JobSpec, need: int):
        self.idx = idx
        self.spec = spec
        self.need = need
        self.key = None
        self.state = JobState.PENDING
        self.enter = spec.submit_time
        self.committed = 0.0
        self.Q = self.R = self.U = 0.0
        self.attempts: List[JobAttempt] = []
        self.start = 0.0
        self.nodes: tuple = ()
        self.token = 0
        self.requeues = 0
        self.preemptions = 0
        self.final: Optional[JobState] = None
        self.eligible_key = None
        self.reason = ""


@dataclass
class SimTrace:
    config: ClusterConfig
    seed: int
    nodes: List[Node]
    runs: List[JobRunRecord]
    attempts: List[JobAttempt]
    health_events: List[HealthCheckEvent]
    node_transitions: List[NodeTransition]
    events: List[SimEvent]
    exclusions: List[tuple]  # (time, node_id, job_id)
    lemon_flags: List[tuple]  # (time, node_id)
    end_time: float
    start_time: float = 0.0
    specs: List[JobSpec] = field(default_factory=list)

    @property
    def ground_truth(self) -> Dict[str, bool]:
        return {n.node_id: n.is_lemon for n in self.nodes}

    @property
    def run_by_id(self) -> Dict[str, JobRunRecord]:
        return {r.job_id: r for r in self.runs}

    def remediation_spans(self) -> List[RemediationSpan]:
        open_: Dict[str, NodeTransition] = {}
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


class ClusterSimulator:
    def __init__(
        self,
        config: ClusterConfig,
        workload: Sequence[JobSpec],
        seed: int = 0,
        priority_key: Optional[Callable[[JobSpec], tuple]] = None,
    ):
        if not workload:
            raise ValueError("workload must be non-empty")
        ids = [j.job_id for j in workload]
        if len(set(ids)) != len(ids):
            raise ValueError("job ids must be unique")
        self.cfg = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.priority_key = priority_key or (lambda s: (-s.priority, s.submit_time, s.job_id))
        n = config.node_count
        self.node_ids = [f"n{i:05d}" for i in range(n)]
        mult = np.ones(n)
        n_lemons = int(round(config.lemon_fraction * n))
        if n_lemons:
            mult[np.sort(self.rng.choice(n, n_lemons, replace=False))] = config.lemon_multiplier
        base = config.failure_rate
        self.initial_nodes = [
            Node(self.node_ids[i], config.gpus_per_node, base, float(mult[i])) for i in range(n)
        ]
        self.mult = mult
        self.rate = base.per_second * mult  # per-second effective rate
        self.nstate = [NodeState.AVAILABLE] * n
        self.occupant = [-1] * n
        self.drain_reason = [""] * n
        self.replace_pending = [False] * n
        self.rem_token = [0] * n
        self.in_heap = [True] * n
        self.free_heap = list(range(n))
        self.free_count = n

        weights = config.weights
        self.causes = sorted(weights, key=lambda c: c.value)
        w = np.array([weights[c] for c in self.causes])
        self.cause_cdf = np.cumsum(w / w.sum())

        self.runs = [_Run(i, s, nodes_required(s, config.gpus_per_node)) for i, s in enumerate(workload)]
        self.pending = SortedList()
        self.eligible: Dict[int, SortedList] = {}
        self.eligible_nodes: Dict[int, int] = {}

        self.heap: list = []
        self.seq = 0
        self.active = len(self.runs)
        self.dirty = False
        self.now = 0.0

        self.attempts: List[JobAttempt] = []
        self.health: List[HealthCheckEvent] = []
        self.transitions: List[NodeTransition] = []
        self.events: List[SimEvent] = []
        self.exclusions: List[tuple] = []
        self.lemon_flags: List[tuple] = []
        self.flagged = set()
        self.tracker = SignalTracker()
        for nid in self.node_ids:
            self.tracker.add_node(nid)

    # -- plumbing -----------------------------------------------------------

    def _push(self, t, order, ident, kind, data):
        self.seq += 1
        heapq.heappush(self.heap, (t, order, ident, self.seq, kind, data))

    def _emit(self, t, kind, job_id=None, node_id=None, **payload):
        if self.cfg.record_events:
            self.events.append(SimEvent(t, kind, job_id, node_id, payload))

    def _transition(self, t, i, state, reason):
        self.nstate[i] = state
        self.transitions.append(NodeTransition(t, self.node_ids[i], state, reason))
        self._emit(t, SimEventKind.NODE_STATE, node_id=self.node_ids[i], state=state.value, reason=reason)

    def _is_free(self, i):
        return self.nstate[i] == NodeState.AVAILABLE and self.occupant[i] < 0

    def _mark_free(self, i):
        self.free_count += 1
        self.dirty = True
        if not self.in_heap[i]:
            self.in_heap[i] = True
            heapq.heappush(self.free_heap, i)

    def _take_nodes(self, k):
        out = []
        while len(out) < k:
            i = heapq.heappop(self.free_heap)
            self.in_heap[i] = False
            if self._is_free(i):
                out.append(i)
        self.free_count -= k
        return out

    def _draw_cause(self) -> FailureCause:
        return self.causes[int(np.searchsorted(self.cause_cdf, self.rng.random(), side="right").clip(max=len(self.causes) - 1))]

    def _next_tick(self, t):
        p = self.cfg.health_check_period
        return (math.floor(t / p) + 1) * p

    # -- node lifecycle -----------------------------------------------------

    def _enter_remediation(self, t, i, reason, duration):
        if self._is_free(i):
            self.free_count -= 1
        self._transition(t, i, NodeState.REMEDIATION, reason)
        self.tracker.removed(t, self.node_ids[i], ticket=reason == "failure")
        self.rem_token[i] += 1
        self._push(t + duration, _K_REMEDIATED, self.node_ids[i], "remediated", (i, self.rem_token[i]))

    def _drain(self, t, i, reason, duration):
        """Remove a node now if idle, otherwise after its current job."""
        if self.nstate[i] == NodeState.REMEDIATION:
            return
        if self.occupant[i] < 0:
            self._enter_remediation(t, i, reason, duration)
        else:
            if self.nstate[i] != NodeState.DRAINING or reason == "lemon":
                self.drain_reason[i] = reason
            if self.nstate[i] != NodeState.DRAINING:
                self._transition(t, i, NodeState.DRAINING, reason)

    def _repair_duration(self, reason):
        if reason == "false_positive":
            return self.cfg.false_positive_repair_time
        if reason == "lemon":
            return self.cfg.repair_time if self.cfg.lemon_repair_time is None else self.cfg.lemon_repair_time
        return self.cfg.repair_time

    def _on_remediated(self, t, data):
        i, tok = data
        if tok != self.rem_token[i] or self.nstate[i] != NodeState.REMEDIATION:
            return
        reason = "repaired"
        if self.replace_pending[i]:
            self.replace_pending[i] = False
            self.mult[i] = 1.0
            self.rate[i] = self.cfg.failure_rate.per_second
            self.tracker.reset(t, self.node_ids[i])
            self.flagged.discard(i)
            reason = "replaced"
        self._transition(t, i, NodeState.AVAILABLE, reason)
        self._emit(t, SimEventKind.NODE_REMEDIATED, node_id=self.node_ids[i], reason=reason)
        if self.occupant[i] < 0:
            self._mark_free(i)

    def _release(self, t, nodes):
        for i in nodes:
            self.occupant[i] = -1
            st = self.nstate[i]
            if st == NodeState.AVAILABLE:
                self._mark_free(i)
            elif st == NodeState.DRAINING:
                reason = self.drain_reason[i] or "drain"
                self._enter_remediation(t, i, reason, self._repair_duration(reason))

    # -- job lifecycle ------------------------------------------------------

    def _enqueue(self, run, t):
        run.state = JobState.PENDING
        run.enter = t
        run.key = (*self.priority_key(run.spec), run.idx)
        self.pending.add(run.key)
        self.dirty = True

    def _lifetime(self, run):
        return min(run.spec.max_lifetime, self.cfg.max_job_lifetime)

    def _start(self, run, t):
        spec = run.spec
        self.pending.remove(run.key)
        nodes = self._take_nodes(run.need)
        run.token += 1
        run.state = JobState.RUNNING
        run.Q += t - run.enter
        run.start = t
        run.nodes = tuple(nodes)
        for i in nodes:
            self.occupant[i] = run.idx
        remaining = spec.required_productive_time - run.committed
        dur = attempt_duration(remaining, spec.restart_overhead, spec.checkpoint_interval, spec.checkpoint_write_overhead)
        life = self._lifetime(run)
        rates = self.rate[nodes]
        lam = float(rates.sum())
        t_fail = self.rng.exponential(1.0 / lam) if lam > 0 else math.inf
        if t_fail < min(dur, life):
            u = self.rng.random() * lam
            k = int(np.searchsorted(np.cumsum(rates), u, side="right"))
            k = min(k, len(nodes) - 1)
            self._push(t + t_fail, _K_FAILURE, spec.job_id, "failure", (run.idx, run.token, nodes[k]))
        elif dur <= life:
            self._push(t + dur, _K_END, spec.job_id, "end", (run.idx, run.token, JobState.COMPLETED))
        else:
            self._push(t + life, _K_END, spec.job_id, "end", (run.idx, run.token, JobState.TIMEOUT))
        age = self.cfg.min_preemption_age
        if age <= 0:
            self._make_eligible(run)
        elif min(dur, life) > age:
            self._push(t + age, _K_WAKE, spec.job_id, "wake", (run.idx, run.token))
        self._emit(t, SimEventKind.START, spec.job_id, attempt=len(run.attempts), nodes=len(nodes))

    def _make_eligible(self, run):
        p = run.spec.priority
        key = (-run.start, run.spec.job_id, run.idx)
        self.eligible.setdefault(p, SortedList()).add(key)
        self.eligible_nodes[p] = self.eligible_nodes.get(p, 0) + run.need
        run.eligible_key = key
        self.dirty = True

    def _drop_eligible(self, run):
        if run.eligible_key is not None:
            p = run.spec.priority
            self.eligible[p].remove(run.eligible_key)
            self.eligible_nodes[p] -= run.need
            run.eligible_key = None

    def _end_attempt(self, run, t, state, failed_node=None, preempted_by=None):
        spec = run.spec
        elapsed = t - run.start
        u0, dt, w = spec.restart_overhead, spec.checkpoint_interval, spec.checkpoint_write_overhead
        if state == JobState.COMPLETED:
            done = spec.required_productive_time - run.committed
            n_cp = 0 if dt is None else max(math.ceil(done / dt) - 1, 0)
            last = None if n_cp == 0 else min(run.start + u0 + n_cp * (dt + w), t)
        else:
            done, n_cp, off = attempt_progress(elapsed, u0, dt, w)
            last = None if off is None else run.start + off
        run.R += done
        run.U += max(elapsed - done, 0.0)  # float rounding can leave -1e-11
        run.committed += done
        a = JobAttempt(
            job_id=spec.job_id,
            attempt_index=len(run.attempts),
            start_time=run.start,
            end_time=t,
            end_state=state,
            nodes=tuple(self.node_ids[i] for i in run.nodes),
            gpus=spec.gpus,
            logical_run_id=spec.logical_run_id,
            last_checkpoint_completion=last,
            checkpoints_written=n_cp,
            failed_node=None if failed_node is None else self.node_ids[failed_node],
            preempted_by=preempted_by,
        )
        run.attempts.append(a)
        self.attempts.append(a)
        if state != JobState.RUNNING:
            self.tracker.job_end(a)
        run.token += 1
        self._drop_eligible(run)
        nodes, run.nodes = run.nodes, ()
        self._release(t, nodes)
        return a

    def _finish(self, run, t, state):
        run.state = state
        run.final = state
        self.active -= 1

    def _on_end(self, t, data):
        idx, tok, state = data
        run = self.runs[idx]
        if tok != run.token:
            return
        self._end_attempt(run, t, state)
        self._emit(t, SimEventKind.COMPLETE, run.spec.job_id, state=state.value)
        self._finish(run, t, state)

    def _on_failure(self, t, data):
        idx, tok, i = data
        run = self.runs[idx]
        if tok != run.token:
            return
        node = self.node_ids[i]
        self._emit(t, SimEventKind.NODE_FAILURE, run.spec.job_id, node)
        self._enter_remediation(t, i, "failure", self.cfg.repair_time)
        cause = self._draw_cause()
        when = self._next_tick(t)
        if cause == FailureCause.NODE_FAIL_CATCHALL:
            when += self.cfg.heartbeat_timeout
        ev = HealthCheckEvent(node, when, cause, cause.default_severity, False)
        self._push(when, _K_HEALTH, node, "health", ev)
        if self.rng.random() < self.cfg.co_occurrence_prob:
            other = COMPANION_CAUSE.get(cause)
            if other is None:
                other = self._draw_cause()
            if other != cause:
                self._push(when, _K_HEALTH, node, "health", HealthCheckEvent(node, when, other, other.default_severity, False))
        self._fail_job(run, t, i)

    def _fail_job(self, run, t, i):
        spec = run.spec
        nodes = run.nodes
        self._end_attempt(run, t, JobState.NODE_FAIL, failed_node=i)
        if self.cfg.user_exclusion_prob > 0:
            if self.rng.random() < self.cfg.user_exclusion_prob:
                self._exclude(t, i, spec.job_id)
            if len(nodes) > 1 and self.rng.random() < self.cfg.user_exclusion_prob:
                self._exclude(t, nodes[int(self.rng.integers(len(nodes)))], spec.job_id)
        cap = self.cfg.max_requeues
        if self.cfg.requeue_on_node_fail and (cap is None or run.requeues < cap):
            run.requeues += 1
            self._emit(t, SimEventKind.REQUEUE, spec.job_id, reason="node_fail")
            self._enqueue(run, t)
        else:
            self._emit(t, SimEventKind.COMPLETE, spec.job_id, state=JobState.NODE_FAIL.value)
            self._finish(run, t, JobState.NODE_FAIL)

    def _exclude(self, t, i, job_id):
        self.exclusions.append((t, self.node_ids[i], job_id))
        self.tracker.exclusion(t, self.node_ids[i], job_id)

    def _on_health(self, t, ev: HealthCheckEvent):
        self.health.append(ev)
        self.tracker.health_event(t, ev.node_id, ev.check_kind)
        self._emit(
            t, SimEventKind.HEALTH_TICK, node_id=ev.node_id, check=ev.check_kind.value,
            severity=ev.severity.value, false_positive=ev.is_false_positive,
        )

    def _schedule_fp(self, t, i):
        p = self.cfg.false_positive_rate
        if p <= 0:
            return
        ticks = int(self.rng.geometric(p))
        period = self.cfg.health_check_period
        when = (math.floor(t / period) + ticks) * period
        self._push(when, _K_FP, self.node_ids[i], "fp", i)

    def _on_fp(self, t, i):
        self._schedule_fp(t, i)
        if self.nstate[i] == NodeState.REMEDIATION:
            return
        kind = self._draw_cause()
        sev = self.cfg.false_positive_severity
        self._on_health(t, HealthCheckEvent(self.node_ids[i], t, kind, sev, True))
        occ = self.occupant[i]
        if sev == Severity.HIGH and occ >= 0:
            run = self.runs[occ]
            self._enter_remediation(t, i, "false_positive", self.cfg.false_positive_repair_time)
            self._fail_job(run, t, i)
        else:
            self._drain(t, i, "false_positive", self.cfg.false_positive_repair_time)

    def _on_lemon_scan(self, t):
        cfg = self.cfg
        self._push(t + cfg.lemon_check_period, _K_LEMON, "", "lemon", None)
        sigs = self.tracker.snapshot(t, cfg.lemon_window)
        for v in classify_lemons(sigs, cfg.lemon_thresholds):
            if not v.flagged:
                continue
            i = int(v.node_id[1:])
            if i in self.flagged:
                continue
            self.flagged.add(i)
            self.replace_pending[i] = True
            self.lemon_flags.append((t, v.node_id))
            self._emit(t, SimEventKind.LEMON_FLAG, node_id=v.node_id, signals=list(v.triggering_signals))
            self._drain(t, i, "lemon", self._repair_duration("lemon"))

    def _on_wake(self, t, data):
        idx, tok = data
        run = self.runs[idx]
        if tok == run.token and run.state == JobState.RUNNING:
            self._make_eligible(run)

    def _on_submit(self, t, idx):
        run = self.runs[idx]
        self._emit(t, SimEventKind.SUBMIT, run.spec.job_id, gpus=run.spec.gpus, priority=run.spec.priority)
        if run.need > self.cfg.node_count:
            run.reason = f"needs {run.need} nodes, cluster has {self.cfg.node_count}"
            self._emit(t, SimEventKind.COMPLETE, run.spec.job_id, state=JobState.FAILED.value, reason=run.reason)
            self._finish(run, t, JobState.FAILED)
            return
        self._enqueue(run, t)

    # -- scheduling ---------------------------------------------------------

    def _capacity_below(self, prio):
        return sum(n for p, n in self.eligible_nodes.items() if p < prio)

    def _preempt_for(self, run, t, deficit) -> bool:
        """Preempt just enough victims to free ``deficit`` usable nodes.

        Nodes that are draining go to remediation when their job ends, so
        they do not count. Returns False (and preempts nobody) if the
        eligible victims cannot cover the deficit.
        """
        victims = []
        got = 0
        for p in sorted(q for q in self.eligible if q < run.spec.priority):
            for key in self.eligible[p]:
                v = self.runs[key[2]]
                victims.append(v)
                got += sum(1 for i in v.nodes if self.nstate[i] == NodeState.AVAILABLE)
                if got >= deficit:
                    break
            if got >= deficit:
                break
        if got < deficit:
            return False
        for v in victims:
            v.preemptions += 1
            self._emit(t, SimEventKind.PREEMPT, v.spec.job_id, by=run.spec.job_id)
            self._end_attempt(v, t, JobState.PREEMPTED, preempted_by=run.spec.job_id)
            self._emit(t, SimEventKind.REQUEUE, v.spec.job_id, reason="preempted")
            self._enqueue(v, t)
        return True

    def _schedule(self, t):
        pending = self.pending
        if not pending:
            return
        min_need = min(self.runs[k[-1]].need for k in pending) if len(pending) < 64 else 1
        i = 0
        while i < len(pending):
            run = self.runs[pending[i][-1]]
            free = self.free_count
            if run.need <= free:
                self._start(run, t)
                continue
            cap = self._capacity_below(run.spec.priority)
            if cap == 0 and free < min_need:
                break
            if free + cap >= run.need:
                if self._preempt_for(run, t, run.need - free):
                    self._start(run, t)
                    i = 0  # victims re-entered the queue
                    continue
            i += 1

    # -- main loop ----------------------------------------------------------

    def run(self) -> SimTrace:
        cfg = self.cfg
        for run in self.runs:
            self._push(run.spec.submit_time, _K_SUBMIT, run.spec.job_id, "submit", run.idx)
        for i in range(cfg.node_count):
            self._schedule_fp(0.0, i)
        if cfg.lemon_detection:
            self._push(cfg.lemon_check_period, _K_LEMON, "", "lemon", None)
        handlers = {
            "remediated": self._on_remediated,
            "end": self._on_end,
            "failure": self._on_failure,
            "health": self._on_health,
            "fp": self._on_fp,
            "lemon": lambda t, _: self._on_lemon_scan(t),
            "submit": self._on_submit,
            "wake": self._on_wake,
        }
        heap = self.heap
        horizon = cfg.horizon
        t = 0.0
        while heap and self.active > 0:
            t = heap[0][0]
            if horizon is not None and t > horizon:
                break
            self.now = t
            while heap and heap[0][0] == t:
                _, _, _, _, kind, data = heapq.heappop(heap)
                handlers[kind](t, data)
            if self.dirty:
                self.dirty = False
                self._schedule(t)
        end = t
        if horizon is not None and (self.active > 0 or t > horizon):
            end = horizon
        # drain health events already due (logged after the last job ended)
        while heap and heap[0][0] <= end:
            _, _, _, _, kind, data = heapq.heappop(heap)
            if kind == "health":
                self._on_health(data.time, data)
        return self._close(end)

    def _close(self, end) -> SimTrace:
        censored = set()
        for run in self.runs:
            if run.final is not None:
                continue
            censored.add(run.idx)
            if run.spec.submit_time > end:
                continue
            if run.state == JobState.RUNNING:
                self._end_attempt(run, end, JobState.RUNNING)
                run.state = JobState.RUNNING
            else:
                run.Q += end - run.enter
        records = []
        for run in self.runs:
            spec = run.spec
            if spec.submit_time > end:
                continue  # never submitted before the horizon
            records.append(
                JobRunRecord(
                    logical_run_id=spec.logical_run_id,
                    attempts=tuple(run.attempts),
                    Q=run.Q,
                    R=run.R,
                    U=run.U,
                    job_id=spec.job_id,
                    gpus=spec.gpus,
                    submit_time=spec.submit_time,
                    final_state=run.final if run.final is not None else run.state,
                    censored=run.idx in censored,
                    extra={"requeues": run.requeues, "preemptions": run.preemptions, **({"reason": run.reason} if run.reason else {})},
                )
            )
        attempts = sorted(self.attempts, key=lambda a: (a.end_time, a.job_id, a.attempt_index))
        return SimTrace(
            config=self.cfg,
            seed=self.seed,
            nodes=self.initial_nodes,
            runs=records,
            attempts=attempts,
            health_events=self.health,
            node_transitions=self.transitions,
            events=self.events,
            exclusions=self.exclusions,
            lemon_flags=self.lemon_flags,
            end_time=end,
            specs=[r.spec for r in self.runs],
        )


def run_simulation(
    config: ClusterConfig,
    workload: Sequence[JobSpec],
    seed: int = 0,
    priority_key: Optional[Callable[[JobSpec], tuple]] = None,
) -> SimTrace:
    """Simulate ``workload`` on a cluster described by ``config``."""
    return ClusterSimulator(config, workload, seed, priority_key).run()
