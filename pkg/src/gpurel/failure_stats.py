"""Failure attribution, failure-rate estimation and MTTF projection."""
from __future__ import annotations

import bisect
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import chi2

from .core import (
    DAY,
    DEFAULT_GPUS_PER_NODE,
    FAILURE_STATES,
    HOUR,
    MINUTE,
    FailureCause,
    FailureRate,
    HealthCheckEvent,
    JobAttempt,
    JobState,
    Severity,
    as_rate,
    nodes_required,
    rounded_gpus,
    sorted_by,
)

log = logging.getLogger(__name__)

DEFAULT_CAUSE_PRIORITY = (
    FailureCause.GPU_UNAVAILABLE,
    FailureCause.NVLINK,
    FailureCause.GPU_MEMORY,
    FailureCause.PCIE,
    FailureCause.IB_LINK,
    FailureCause.FS_MOUNT,
    FailureCause.MAIN_MEMORY,
    FailureCause.ETHLINK,
    FailureCause.GPU_DRIVER,
    FailureCause.SYSTEM_SERVICE,
    FailureCause.NODE_FAIL_CATCHALL,
)


class UnsortedInputError(ValueError):
    pass


@dataclass(frozen=True)
class FailureRecord:
    job_id: str
    end_time: float
    end_state: JobState
    attributed_cause: FailureCause
    co_occurring_causes: tuple = ()
    nodes: tuple = ()
    gpus: int = 0
    attempt_index: int = 0

    @property
    def is_infra(self) -> bool:
        """Counts toward the cluster failure rate."""
        return self.end_state == JobState.NODE_FAIL or self.attributed_cause.is_infra


@dataclass(frozen=True)
class RateEstimate:
    rate: FailureRate
    failures: int
    exposure: float  # node-days
    ci90: Tuple[FailureRate, FailureRate]


def attribute_failures(
    jobs: Sequence[JobAttempt],
    events: Sequence[HealthCheckEvent],
    pre_window: float = 10 * MINUTE,
    post_window: float = 5 * MINUTE,
    priority: Sequence[FailureCause] = DEFAULT_CAUSE_PRIORITY,
    severities: Iterable[Severity] = (Severity.HIGH, Severity.LOW),
    known_nodes: Optional[Iterable[str]] = None,
) -> List[FailureRecord]:
    """Blame each FAILED/NODE_FAIL job on health events near its end.

    Events on the job's nodes inside ``[end - pre_window, end + post_window]``
    qualify. The highest-priority kind wins; the remaining distinct kinds are
    kept as co-occurring causes. Jobs must be sorted by end time and events by
    time. Events on nodes not in ``known_nodes`` (default: every node seen in
    the job log) are dropped and counted in a warning.
    """
    if pre_window < 0 or post_window < 0:
        raise ValueError("windows must be >= 0")
    if not sorted_by(jobs, lambda j: j.end_time):
        raise UnsortedInputError("job log not sorted by end_time")
    if not sorted_by(events, lambda e: e.time):
        raise UnsortedInputError("health events not sorted by time")
    rank = {c: i for i, c in enumerate(priority)}
    sev = set(severities)
    if known_nodes is None:
        known = {n for j in jobs for n in j.nodes}
    else:
        known = set(known_nodes)
    usable = []
    unknown = 0
    for e in events:
        if e.node_id not in known:
            unknown += 1
            continue
        if e.severity in sev:
            usable.append(e)
    if unknown:
        log.warning("ignored %d health events on unknown nodes", unknown)
    times = [e.time for e in usable]

    out = []
    for j in jobs:
        if j.end_state not in FAILURE_STATES:
            continue
        lo = bisect.bisect_left(times, j.end_time - pre_window)
        hi = bisect.bisect_right(times, j.end_time + post_window)
        nodes = set(j.nodes)
        kinds = {usable[k].check_kind for k in range(lo, hi) if usable[k].node_id in nodes}
        if kinds:
            ordered = sorted(kinds, key=lambda c: (rank.get(c, len(rank)), c.value))
            cause, others = ordered[0], tuple(ordered[1:])
        else:
            cause, others = FailureCause.UNATTRIBUTED, ()
        out.append(
            FailureRecord(
                job_id=j.job_id,
                end_time=j.end_time,
                end_state=j.end_state,
                attributed_cause=cause,
                co_occurring_causes=others,
                nodes=tuple(j.nodes),
                gpus=j.gpus,
                attempt_index=j.attempt_index,
            )
        )
    return out


def rate_confidence_interval(failures: int, exposure: float, confidence: float = 0.90) -> Tuple[float, float]:
    """Exact (Garwood) Poisson interval for a rate, in failures per exposure unit."""
    if not exposure > 0:
        raise ValueError("exposure must be > 0")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if failures < 0:
        raise ValueError("failures must be >= 0")
    alpha = 1.0 - confidence
    k = int(failures)
    lower = 0.0 if k == 0 else chi2.ppf(alpha / 2, 2 * k) / 2.0
    upper = chi2.ppf(1 - alpha / 2, 2 * k + 2) / 2.0
    return float(lower / exposure), float(upper / exposure)


def _job_key(j: JobAttempt):
    return (j.job_id, j.attempt_index)


def estimate_failure_rate(
    records: Sequence[FailureRecord],
    jobs: Sequence[JobAttempt],
    min_gpus: int = 128,
    confidence: float = 0.90,
) -> RateEstimate:
    """Cluster failure rate r_f from jobs strictly larger than ``min_gpus``.

    Failures are NODE_FAIL jobs plus FAILED jobs attributed to an infra cause.
    Exposure is the sum of runtime (days) times allocated nodes.
    """
    big = [j for j in jobs if j.gpus > min_gpus]
    exposure = math.fsum(j.runtime / DAY * j.n_nodes for j in big)
    if exposure <= 0:
        raise ValueError("zero exposure: no qualifying job runtime")
    keys = {_job_key(j) for j in big}
    failures = sum(1 for r in records if (r.job_id, r.attempt_index) in keys and r.is_infra)
    lo, hi = rate_confidence_interval(failures, exposure, confidence)
    return RateEstimate(FailureRate(failures / exposure), failures, exposure, (FailureRate(lo), FailureRate(hi)))


def project_mttf(gpus: int, r_f, gpus_per_node: int = DEFAULT_GPUS_PER_NODE) -> float:
    """Projected MTTF in hours for a job of ``gpus`` GPUs: 1 / (N_nodes r_f)."""
    r_f = as_rate(r_f)
    if gpus < 1:
        raise ValueError("gpus must be >= 1")
    if r_f.value == 0:
        raise ValueError("infinite MTTF: failure rate is zero")
    n = nodes_required(gpus, gpus_per_node)
    return 1.0 / (n * r_f.value) * 24.0


@dataclass
class RollingRate:
    days: np.ndarray  # day index (end of trailing window)
    rate: np.ndarray  # failures per 1000 node-days
    failures: np.ndarray
    exposure: np.ndarray  # node-days
    by_cause: Dict[FailureCause, np.ndarray] = field(default_factory=dict)

    CSV_COLUMNS = ("day", "rate_per_1000", "failures", "exposure_node_days")

    def rows(self):
        for i, d in enumerate(self.days):
            row = {
                "day": int(d),
                "rate_per_1000": float(self.rate[i]),
                "failures": int(self.failures[i]),
                "exposure_node_days": float(self.exposure[i]),
            }
            for c, series in self.by_cause.items():
                row[c.value] = float(series[i])
            yield row


def _daily_node_days(jobs: Sequence[JobAttempt], n_days: int) -> np.ndarray:
    """Node-days of runtime falling in each calendar day [d, d+1)."""
    exp = np.zeros(n_days)
    for j in jobs:
        s, e, n = j.start_time / DAY, j.end_time / DAY, j.n_nodes
        d0 = int(math.floor(s))
        d1 = int(math.floor(e))
        if d0 >= n_days:
            continue
        if d0 == d1:
            exp[d0] += (e - s) * n
            continue
        exp[d0] += (d0 + 1 - s) * n
        last = min(d1, n_days)
        if last > d0 + 1:
            exp[d0 + 1 : last] += n
        if d1 < n_days:
            exp[d1] += (e - d1) * n
    return exp


def rolling_failure_rate(
    records: Sequence[FailureRecord],
    jobs: Sequence[JobAttempt],
    window: float = 30 * DAY,
    by_cause: bool = False,
    n_days: Optional[int] = None,
    min_gpus: int = 0,
) -> RollingRate:
    """Per-day trailing-window failure rate (failures per 1000 node-days).

    Day ``d`` covers failures and exposure in ``(d + 1 - window_days, d + 1]``
    days. Only infra failures on jobs larger than ``min_gpus`` count.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    if not sorted_by(records, lambda r: r.end_time):
        raise UnsortedInputError("failure records not sorted by end_time")
    jobs = [j for j in jobs if j.gpus > min_gpus]
    if n_days is None:
        horizon = max([j.end_time for j in jobs] + [r.end_time for r in records] + [0.0])
        n_days = int(math.ceil(horizon / DAY)) or 1
    wdays = max(int(round(window / DAY)), 1)
    exp_daily = _daily_node_days(jobs, n_days)
    keys = {_job_key(j) for j in jobs}
    counted = [r for r in records if r.is_infra and (r.job_id, r.attempt_index) in keys]
    fail_daily = np.zeros(n_days)
    cause_daily: Dict[FailureCause, np.ndarray] = defaultdict(lambda: np.zeros(n_days))
    for r in counted:
        d = min(int(r.end_time // DAY), n_days - 1)
        fail_daily[d] += 1
        if by_cause:
            cause_daily[r.attributed_cause][d] += 1

    def trailing(x):
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(n_days) + 1
        return c[idx] - c[np.maximum(idx - wdays, 0)]

    exp_w = trailing(exp_daily)
    fail_w = trailing(fail_daily)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(exp_w > 0, fail_w / exp_w * 1000.0, 0.0)
        causes = {
            c: np.where(exp_w > 0, trailing(v) / exp_w * 1000.0, 0.0) for c, v in sorted(cause_daily.items())
        }
    return RollingRate(np.arange(n_days), rate, fail_w.astype(int), exp_w, causes if by_cause else {})


@dataclass(frozen=True)
class MttfRow:
    bucket: int  # GPUs, rounded to multiple of 8
    jobs: int
    failures: int
    exposure_hours: float  # job wallclock runtime
    empirical_mttf_hours: float
    ci90_hours: Tuple[float, float]
    projected_mttf_hours: Optional[float]
    is_lower_bound: bool = False

    CSV_COLUMNS = (
        "bucket_gpus",
        "jobs",
        "failures",
        "exposure_hours",
        "empirical_mttf_hours",
        "ci90_low_hours",
        "ci90_high_hours",
        "projected_mttf_hours",
        "is_lower_bound",
    )

    def as_row(self):
        return {
            "bucket_gpus": self.bucket,
            "jobs": self.jobs,
            "failures": self.failures,
            "exposure_hours": self.exposure_hours,
            "empirical_mttf_hours": self.empirical_mttf_hours,
            "ci90_low_hours": self.ci90_hours[0],
            "ci90_high_hours": self.ci90_hours[1],
            "projected_mttf_hours": self.projected_mttf_hours,
            "is_lower_bound": self.is_lower_bound,
        }


def mttf_by_job_size(
    jobs: Sequence[JobAttempt],
    records: Sequence[FailureRecord],
    size_buckets: Sequence[int],
    r_f=None,
    gpus_per_node: int = DEFAULT_GPUS_PER_NODE,
    confidence: float = 0.90,
) -> List[MttfRow]:
    """Empirical MTTF per job-size bucket alongside the 1/(N r_f) projection.

    A job lands in the smallest bucket >= its GPU count rounded up to a
    multiple of ``gpus_per_node``; jobs above the largest bucket are dropped.
    """
    buckets = sorted(set(int(b) for b in size_buckets))
    if not buckets:
        raise ValueError("size_buckets must be non-empty")

    def bucket_of(gpus):
        g = rounded_gpus(gpus, gpus_per_node)
        i = bisect.bisect_left(buckets, g)
        return buckets[i] if i < len(buckets) else None

    runtime: Counter = Counter()
    count: Counter = Counter()
    keys = {}
    for j in jobs:
        b = bucket_of(j.gpus)
        if b is None:
            continue
        runtime[b] += j.runtime
        count[b] += 1
        keys[_job_key(j)] = b
    fails: Counter = Counter()
    for r in records:
        b = keys.get((r.job_id, r.attempt_index))
        if b is not None:
            fails[b] += 1

    rows = []
    for b in buckets:
        hours = runtime[b] / HOUR
        if hours <= 0:
            if count[b] or fails[b]:
                log.warning("bucket %d GPUs has zero runtime; row omitted", b)
            continue
        k = fails[b]
        lo_rate, hi_rate = rate_confidence_interval(k, hours, confidence)
        ci = (1.0 / hi_rate, math.inf if lo_rate == 0 else 1.0 / lo_rate)
        proj = project_mttf(b, r_f, gpus_per_node) if r_f is not None and as_rate(r_f).value > 0 else None
        if k == 0:
            rows.append(MttfRow(b, count[b], 0, hours, hours, (hours, math.inf), proj, True))
        else:
            rows.append(MttfRow(b, count[b], k, hours, hours / k, ci, proj))
    return rows
