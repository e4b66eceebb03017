"""Lemon-node detection: per-node signals, threshold rules, evaluation."""
from __future__ import annotations

import bisect
import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .core import DAY, XID_CLASS_CAUSES, FailureCause, JobAttempt, JobState, NodeState

SIGNALS = (
    "excl_jobid_count",
    "xid_cnt",
    "tickets",
    "out_count",
    "multi_node_node_fails",
    "single_node_node_fails",
    "single_node_node_failure_rate",
)
# excl_jobid_count is tracked but left out: user exclusions barely track real failures.
DEFAULT_RULE_SIGNALS = SIGNALS[1:]


@dataclass(frozen=True)
class NodeSignals:
    node_id: str
    excl_jobid_count: int = 0
    xid_cnt: int = 0
    tickets: int = 0
    out_count: int = 0
    multi_node_node_fails: int = 0
    single_node_node_fails: int = 0
    single_node_node_failure_rate: float = 0.0
    window: float = 28 * DAY

    def value(self, name: str) -> float:
        return getattr(self, name)

    def as_row(self) -> dict:
        d = {"node_id": self.node_id}
        d.update({s: getattr(self, s) for s in SIGNALS})
        d["window"] = self.window
        return d


@dataclass(frozen=True)
class LemonVerdict:
    node_id: str
    flagged: bool
    triggering_signals: tuple = ()
    threshold_set_id: str = ""

    def __post_init__(self):
        if self.flagged and not self.triggering_signals:
            raise ValueError("flagged verdict needs at least one triggering signal")


class SignalTracker:
    """Time-stamped per-node incident log answering trailing-window queries.

    The simulator feeds it live; :func:`compute_node_signals` replays a
    finished trace into it. Both paths share the counting code below.
    """

    def __init__(self):
        self._excl = defaultdict(list)  # (t, job_id)
        self._xid = defaultdict(list)  # (t, kind)
        self._tickets = defaultdict(list)
        self._out = defaultdict(list)
        self._multi = defaultdict(list)
        self._single_fail = defaultdict(list)
        self._single_jobs = defaultdict(list)
        self._reset_at: Dict[str, float] = {}
        self.nodes = set()

    @staticmethod
    def _add(store, node, item):
        lst = store[node]
        if not lst or item >= lst[-1]:
            lst.append(item)
        else:
            bisect.insort(lst, item)

    def add_node(self, node_id: str):
        self.nodes.add(node_id)

    def job_end(self, attempt: JobAttempt):
        t = attempt.end_time
        nodes = attempt.nodes
        self.nodes.update(nodes)
        if len(nodes) == 1:
            self._add(self._single_jobs, nodes[0], (t,))
        if attempt.end_state == JobState.NODE_FAIL and attempt.failed_node is not None:
            store = self._single_fail if len(nodes) == 1 else self._multi
            self._add(store, attempt.failed_node, (t,))

    def exclusion(self, t: float, node_id: str, job_id: str):
        self._add(self._excl, node_id, (t, job_id))

    def health_event(self, t: float, node_id: str, kind: FailureCause):
        if kind in XID_CLASS_CAUSES:
            self._add(self._xid, node_id, (t, kind.value))

    def removed(self, t: float, node_id: str, ticket: bool):
        self._add(self._out, node_id, (t,))
        if ticket:
            self._add(self._tickets, node_id, (t,))

    def reset(self, t: float, node_id: str):
        """Forget history before ``t`` (node hardware was replaced)."""
        self._reset_at[node_id] = t

    def _window(self, store, node, t, window):
        lst = store.get(node, ())
        lo_t = t - window
        reset = self._reset_at.get(node)
        if reset is not None and reset > lo_t:
            lo_t = reset
        lo = bisect.bisect_right(lst, (lo_t, "\uffff"))
        hi = bisect.bisect_right(lst, (t, "\uffff"))
        return lst[lo:hi]

    def snapshot(self, t: float, window: float, nodes: Optional[Iterable[str]] = None) -> List[NodeSignals]:
        out = []
        for n in sorted(self.nodes if nodes is None else nodes):
            sj = len(self._window(self._single_jobs, n, t, window))
            sf = len(self._window(self._single_fail, n, t, window))
            out.append(
                NodeSignals(
                    node_id=n,
                    excl_jobid_count=len({j for _, j in self._window(self._excl, n, t, window)}),
                    xid_cnt=len({k for _, k in self._window(self._xid, n, t, window)}),
                    tickets=len(self._window(self._tickets, n, t, window)),
                    out_count=len(self._window(self._out, n, t, window)),
                    multi_node_node_fails=len(self._window(self._multi, n, t, window)),
                    single_node_node_fails=sf,
                    single_node_node_failure_rate=min(sf / sj, 1.0) if sj else 0.0,
                    window=window,
                )
            )
        return out


def compute_node_signals(trace, window: float = 28 * DAY, at: Optional[float] = None) -> List[NodeSignals]:
    """Per-node detection signals over the window ending at ``at`` (default: trace end).

    ``trace`` is anything with ``attempts``, ``health_events``,
    ``node_transitions``, ``exclusions``, ``nodes`` and ``end_time``
    (a :class:`~gpurel.simulator.SimTrace` or a loaded trace file).
    """
    end = trace.end_time if at is None else at
    start = getattr(trace, "start_time", 0.0)
    if window <= 0:
        raise ValueError("window must be > 0")
    if window > end - start + 1e-9:
        raise ValueError(f"window {window / DAY:.1f} d longer than log span {(end - start) / DAY:.1f} d")
    tr = SignalTracker()
    for n in trace.nodes:
        tr.add_node(n.node_id)
    for a in trace.attempts:
        if a.end_state != JobState.RUNNING:
            tr.job_end(a)
    for e in trace.health_events:
        tr.health_event(e.time, e.node_id, e.check_kind)
    for x in trace.node_transitions:
        if x.state in (NodeState.REMEDIATION, NodeState.DRAINING) and x.counts_as_removal:
            tr.removed(x.time, x.node_id, ticket=x.reason == "failure")
        if x.reason == "replaced":
            tr.reset(x.time, x.node_id)
    for t, node, job in trace.exclusions:
        tr.exclusion(t, node, job)
    return tr.snapshot(end, window)


@dataclass(frozen=True)
class Thresholds:
    """Per-signal cutoffs; a signal triggers when value >= cutoff."""

    cutoffs: Mapping[str, float]
    rule: str = "any-of"
    k: int = 1
    set_id: str = "default"

    def __post_init__(self):
        object.__setattr__(self, "cutoffs", dict(self.cutoffs))
        bad = set(self.cutoffs) - set(SIGNALS)
        if bad:
            raise ValueError(f"unknown signals: {sorted(bad)}")
        if self.rule not in ("any-of", "k-of-n"):
            raise ValueError(f"unknown rule {self.rule!r}")


DEFAULT_THRESHOLDS = Thresholds(
    {"multi_node_node_fails": 3, "single_node_node_fails": 3, "tickets": 4, "xid_cnt": 4},
    set_id="default",
)


def classify_lemons(
    signals: Sequence[NodeSignals],
    thresholds: Thresholds,
    rule_signals: Optional[Sequence[str]] = None,
) -> List[LemonVerdict]:
    """Flag nodes whose signals cross the cutoffs.

    ``any-of`` flags on a single crossing; ``k-of-n`` needs ``thresholds.k``.
    Every signal in ``rule_signals`` (default: those with a cutoff) must have
    a cutoff.
    """
    used = list(thresholds.cutoffs) if rule_signals is None else list(rule_signals)
    missing = [s for s in used if s not in thresholds.cutoffs]
    if missing:
        raise ValueError(f"missing threshold for {missing}")
    need = 1 if thresholds.rule == "any-of" else thresholds.k
    out = []
    for s in signals:
        hits = tuple(name for name in used if s.value(name) >= thresholds.cutoffs[name])
        flagged = len(hits) >= need and len(hits) > 0
        out.append(LemonVerdict(s.node_id, flagged, hits if flagged else (), thresholds.set_id))
    return out


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    false_positive_rate: float
    flagged_fraction: float
    tp: int
    fp: int
    fn: int
    tn: int


def evaluate_detection(verdicts: Sequence[LemonVerdict], ground_truth: Mapping[str, bool]) -> DetectionMetrics:
    """Confusion-matrix metrics; precision is the reported 'accuracy'.

    Precision with nothing flagged is reported as nan.
    """
    ids = {v.node_id for v in verdicts}
    common = ids & set(ground_truth)
    if not common:
        raise ValueError("verdicts and ground truth share no node ids")
    tp = fp = fn = tn = 0
    for v in verdicts:
        if v.node_id not in common:
            continue
        truth = bool(ground_truth[v.node_id])
        if v.flagged and truth:
            tp += 1
        elif v.flagged:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    n = tp + fp + fn + tn
    return DetectionMetrics(
        precision=tp / (tp + fp) if tp + fp else math.nan,
        recall=tp / (tp + fn) if tp + fn else math.nan,
        false_positive_rate=fp / (fp + tn) if fp + tn else 0.0,
        flagged_fraction=(tp + fp) / n,
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


def tune_thresholds(
    signals: Sequence[NodeSignals],
    ground_truth: Mapping[str, bool],
    rule_signals: Sequence[str] = DEFAULT_RULE_SIGNALS,
    quantiles: Sequence[float] = (0.9, 0.95, 0.98, 0.99, 0.995, 0.999),
    min_recall: float = 0.5,
    set_id: str = "tuned",
) -> Thresholds:
    """Exhaustive any-of grid search over per-signal quantile cutoffs.

    Picks the highest precision with recall >= ``min_recall``; ties go to
    higher recall, then to the lexicographically largest cutoff vector
    (the more conservative rule). A signal may also be switched off.
    """
    truth = np.array([bool(ground_truth.get(s.node_id, False)) for s in signals])
    if not truth.any():
        raise ValueError("ground truth has no positives")
    cand_masks = []
    cand_values = []
    for name in rule_signals:
        vals = np.array([s.value(name) for s in signals], dtype=float)
        cuts = sorted({float(np.quantile(vals, q, method="higher")) for q in quantiles})
        cuts = [c for c in cuts if c > 0]
        masks = [np.zeros(len(signals), dtype=bool)]
        values = [math.inf]
        for c in cuts:
            masks.append(vals >= c)
            values.append(c)
        cand_masks.append(masks)
        cand_values.append(values)

    best = None
    for combo in itertools.product(*[range(len(m)) for m in cand_masks]):
        flagged = np.zeros(len(signals), dtype=bool)
        for sig_i, ci in enumerate(combo):
            if ci:
                flagged |= cand_masks[sig_i][ci]
        nflag = int(flagged.sum())
        if not nflag:
            continue
        tp = int((flagged & truth).sum())
        recall = tp / int(truth.sum())
        if recall < min_recall:
            continue
        precision = tp / nflag
        cut_vec = tuple(cand_values[i][ci] for i, ci in enumerate(combo))
        key = (precision, recall, cut_vec)
        if best is None or key > best[0]:
            best = (key, cut_vec)
    if best is None:
        raise ValueError(f"no threshold combination reaches recall {min_recall}")
    cutoffs = {name: v for name, v in zip(rule_signals, best[1]) if math.isfinite(v)}
    return Thresholds(cutoffs, set_id=set_id)


@dataclass
class AbResult:
    large_job_failure_fraction_without: float
    large_job_failure_fraction_with: float
    large_jobs_without: int
    large_jobs_with: int
    flagged_nodes: List[str] = field(default_factory=list)
    lemon_remediation_node_days: float = 0.0
    traces: tuple = ()

    @property
    def relative_reduction(self) -> float:
        w = self.large_job_failure_fraction_without
        return 0.0 if w == 0 else 1.0 - self.large_job_failure_fraction_with / w


def large_job_failure_fraction(attempts: Sequence[JobAttempt], min_gpus: int = 512):
    """Share of ended scheduler jobs with >= ``min_gpus`` GPUs that ended NODE_FAIL."""
    ended = [a for a in attempts if a.gpus >= min_gpus and a.end_state != JobState.RUNNING]
    if not ended:
        return math.nan, 0
    fails = sum(1 for a in ended if a.end_state == JobState.NODE_FAIL)
    return fails / len(ended), len(ended)


def ab_compare_removal(config, workload, thresholds: Thresholds, seed: int, min_gpus: int = 512) -> AbResult:
    """Paired simulations, same seed, with lemon detection off and on."""
    from dataclasses import replace

    from .simulator import run_simulation

    off = run_simulation(replace(config, lemon_detection=False), workload, seed)
    on = run_simulation(replace(config, lemon_detection=True, lemon_thresholds=thresholds), workload, seed)
    f_off, n_off = large_job_failure_fraction(off.attempts, min_gpus)
    f_on, n_on = large_job_failure_fraction(on.attempts, min_gpus)
    lemon_days = sum(x.duration for x in on.remediation_spans() if x.reason == "lemon") / DAY
    return AbResult(
        f_off,
        f_on,
        n_off,
        n_on,
        flagged_nodes=sorted({n for _, n in on.lemon_flags}),
        lemon_remediation_node_days=lemon_days,
        traces=(off, on),
    )


def benchmark_scenario(
    seed: int = 0,
    node_count: int = 1000,
    lemon_fraction: float = 0.01,
    lemon_multiplier: float = 20.0,
    days: float = 90.0,
    job_count: int = 60000,
    utilization: float = 0.9,
    **config_overrides,
):
    """Cluster config and workload for the synthetic lemon benchmark.

    The default workload is sized so arrivals keep the cluster busy for the
    whole horizon at the requested utilization.
    """
    from dataclasses import replace

    from .simulator import ClusterConfig
    from .workload import WorkloadConfig, arrival_rate_for_utilization, generate_workload

    wc = WorkloadConfig(job_count=job_count, seed=seed)
    wc = replace(wc, arrival_rate=arrival_rate_for_utilization(wc, node_count * 8, utilization))
    workload = [j for j in generate_workload(wc) if j.gpus <= node_count * 8]
    cfg = ClusterConfig(
        node_count=node_count,
        lemon_fraction=lemon_fraction,
        lemon_multiplier=lemon_multiplier,
        horizon=days * DAY,
        record_events=False,
        **config_overrides,
    )
    return cfg, workload
