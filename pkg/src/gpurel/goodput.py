"""Lost-goodput accounting over a finished trace."""
from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List

from .core import HOUR, MINUTE, JobState, rounded_gpus

FAILED_STATES = (JobState.NODE_FAIL, JobState.FAILED)


@dataclass
class GoodputBreakdown:
    first_order: float  # GPU-hours
    second_order: float  # GPU-hours
    histogram: Dict[int, Dict[str, float]] = field(default_factory=dict)

    CSV_COLUMNS = ("size_bucket", "first_order_gpu_hours", "second_order_gpu_hours")

    @property
    def total(self) -> float:
        return self.first_order + self.second_order

    @property
    def second_order_share(self) -> float:
        return self.second_order / self.total if self.total > 0 else 0.0

    def rows(self):
        for b in sorted(self.histogram):
            h = self.histogram[b]
            yield {"size_bucket": b, "first_order_gpu_hours": h["first"], "second_order_gpu_hours": h["second"]}


def size_bucket(gpus: int) -> int:
    """Smallest power of two >= the GPU count rounded up to a node multiple (1-7 stay as 1-8)."""
    g = gpus if gpus < 8 else rounded_gpus(gpus)
    b = 1
    while b < g:
        b *= 2
    return b


def _by_job(attempts):
    out = defaultdict(list)
    for a in attempts:
        out[a.job_id].append(a)
    for v in out.values():
        v.sort(key=lambda a: a.attempt_index)
    return out


def _instigator_failed(history, t: float) -> bool:
    """Did the instigator's latest attempt ending at or before ``t`` end in failure?"""
    ends = [a.end_time for a in history]
    i = bisect.bisect_right(ends, t) - 1
    return i >= 0 and history[i].end_state in FAILED_STATES


def goodput_loss_attribution(trace, lost_work_per_failure: float = 30 * MINUTE) -> GoodputBreakdown:
    """First- and second-order lost GPU-hours under the fixed-loss rule.

    A failed attempt loses ``min(runtime, lost_work_per_failure) * gpus``.
    A preempted attempt counts as second order when its preemptor is a
    job that had been requeued after a failure; the loss is charged with
    the same rule and binned under the preemptor's size.
    """
    attempts = list(trace.attempts)
    hist: Dict[int, Dict[str, float]] = defaultdict(lambda: {"first": 0.0, "second": 0.0})
    jobs = _by_job(attempts)
    first = second = 0.0
    for a in attempts:
        loss = min(a.runtime, lost_work_per_failure) * a.gpus / HOUR
        if a.end_state in FAILED_STATES:
            first += loss
            hist[size_bucket(a.gpus)]["first"] += loss
        elif a.end_state == JobState.PREEMPTED and a.preempted_by is not None:
            hist_ = jobs.get(a.preempted_by)
            if hist_ and _instigator_failed(hist_, a.end_time):
                second += loss
                hist[size_bucket(hist_[0].gpus)]["second"] += loss
    return GoodputBreakdown(first, second, dict(hist))


@dataclass(frozen=True)
class CascadeRow:
    logical_run_id: str
    requeues: int
    victims: int
    victim_gpu_hours: float

    CSV_COLUMNS = ("logical_run_id", "requeues", "victims", "victim_gpu_hours")


def cascade_report(trace) -> List[CascadeRow]:
    """Per logical run: failure requeues and the preemptions its restarts caused.

    Victims count only when the preemptor was restarting after a failure,
    by the same rule as second-order goodput loss.
    """
    final = {r.job_id: r.final_state for r in getattr(trace, "runs", ())}
    jobs = _by_job(trace.attempts)
    victims = defaultdict(lambda: [0, 0.0])
    for a in trace.attempts:
        if a.end_state != JobState.PREEMPTED or a.preempted_by is None:
            continue
        hist = jobs.get(a.preempted_by)
        if hist and _instigator_failed(hist, a.end_time):
            v = victims[a.preempted_by]
            v[0] += 1
            v[1] += a.runtime * a.gpus / HOUR
    rows = {}
    for job_id, hist in jobs.items():
        n_fail = sum(1 for a in hist if a.end_state == JobState.NODE_FAIL)
        if n_fail and final.get(job_id) == JobState.NODE_FAIL:
            n_fail -= 1  # the last failure was not requeued
        lid = hist[0].logical_run_id
        prev = rows.get(lid, CascadeRow(lid, 0, 0, 0.0))
        v = victims.get(job_id, (0, 0.0))
        rows[lid] = CascadeRow(lid, prev.requeues + n_fail, prev.victims + v[0], prev.victim_gpu_hours + v[1])
    return [rows[k] for k in sorted(rows)]
