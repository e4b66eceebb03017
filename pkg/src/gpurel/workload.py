"""Synthetic workload generation and trace-level breakdowns."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import DAY, HOUR, MINUTE, JobSpec, JobState


@dataclass(frozen=True)
class SizeBucket:
    """A probability mass spread uniformly over ``sizes`` (GPU counts)."""

    sizes: Tuple[int, ...]
    probability: float
    priority: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("bucket needs at least one positive GPU count")
        if self.probability < 0:
            raise ValueError("bucket probability must be >= 0")


# Calibration parameters: the coarse size shares of a research cluster,
# with larger jobs at higher priority.
DEFAULT_BUCKETS = (
    SizeBucket((1,), 0.44, 0),
    SizeBucket((2, 3, 4, 5, 6, 7), 0.30, 0),
    SizeBucket((8,), 0.16, 1),
    SizeBucket((16, 32, 64, 128), 0.06, 2),
    SizeBucket((256, 512, 1024), 0.035, 3),
    SizeBucket((2048, 4096), 0.005, 4),
)


@dataclass(frozen=True)
class WorkloadConfig:
    job_count: int = 10_000
    size_buckets: Tuple[SizeBucket, ...] = DEFAULT_BUCKETS
    duration_median: float = 2 * HOUR
    duration_sigma: float = 1.5
    duration_cap: float = 7 * DAY
    arrival_rate: float = 1.0 / 60.0  # jobs per second
    seed: int = 0
    checkpoint_interval: Optional[float] = HOUR
    checkpoint_write_overhead: float = 5 * MINUTE
    restart_overhead: float = 5 * MINUTE
    id_prefix: str = "j"

    def __post_init__(self):
        object.__setattr__(self, "size_buckets", tuple(self.size_buckets))
        if self.job_count < 1:
            raise ValueError("job_count must be >= 1")
        total = sum(b.probability for b in self.size_buckets)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"bucket probabilities sum to {total!r}, not 1")
        if self.arrival_rate <= 0 or self.duration_median <= 0 or self.duration_sigma < 0:
            raise ValueError("arrival_rate and duration_median must be > 0, duration_sigma >= 0")

    @property
    def mu(self) -> float:
        return math.log(self.duration_median)

    def mean_gpu_seconds(self) -> float:
        """Expected GPU-seconds of demand per job (cap ignored)."""
        mean_size = sum(b.probability * np.mean(b.sizes) for b in self.size_buckets)
        return mean_size * self.duration_median * math.exp(self.duration_sigma**2 / 2)


def arrival_rate_for_utilization(cfg: WorkloadConfig, total_gpus: int, utilization: float = 0.8) -> float:
    """Poisson arrival rate giving roughly ``utilization`` of ``total_gpus`` busy."""
    return utilization * total_gpus / cfg.mean_gpu_seconds()


def generate_workload(cfg: WorkloadConfig) -> List[JobSpec]:
    """Seeded sample of ``cfg.job_count`` jobs with Poisson arrivals."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.job_count
    probs = np.array([b.probability for b in cfg.size_buckets])
    which = rng.choice(len(probs), size=n, p=probs / probs.sum())
    pick = rng.random(n)
    durations = np.minimum(rng.lognormal(cfg.mu, cfg.duration_sigma, n), cfg.duration_cap)
    arrivals = np.cumsum(rng.exponential(1.0 / cfg.arrival_rate, n))
    width = len(str(n - 1))
    jobs = []
    for i in range(n):
        b = cfg.size_buckets[which[i]]
        gpus = b.sizes[min(int(pick[i] * len(b.sizes)), len(b.sizes) - 1)]
        jobs.append(
            JobSpec(
                job_id=f"{cfg.id_prefix}{i:0{width}d}",
                gpus=gpus,
                required_productive_time=float(max(durations[i], 1.0)),
                priority=b.priority,
                submit_time=float(arrivals[i]),
                checkpoint_interval=cfg.checkpoint_interval,
                checkpoint_write_overhead=cfg.checkpoint_write_overhead if cfg.checkpoint_interval else 0.0,
                restart_overhead=cfg.restart_overhead,
            )
        )
    return jobs


def gpu_time_shares(jobs: Sequence[JobSpec], small_max: int = 8, large_min: int = 256) -> dict:
    """Job-count and GPU-time-demand shares of small and large jobs."""
    gpus = np.array([j.gpus for j in jobs], dtype=float)
    demand = gpus * np.array([j.required_productive_time for j in jobs])
    total = demand.sum()
    small = gpus <= small_max
    large = gpus >= large_min
    return {
        "small_job_fraction": float(small.mean()),
        "small_gpu_time_share": float(demand[small].sum() / total),
        "large_job_fraction": float(large.mean()),
        "large_gpu_time_share": float(demand[large].sum() / total),
    }


@dataclass
class StatusRow:
    state: str
    job_pct: float
    gpu_time_pct: float

    CSV_COLUMNS = ("state", "job_pct", "gpu_time_pct")


def status_breakdown(attempts) -> List[StatusRow]:
    """Share of scheduler jobs and of GPU runtime by end state.

    Each attempt is one scheduler job. Attempts still RUNNING at the horizon
    are reported as RUNNING.
    """
    counts = defaultdict(int)
    gpu_time = defaultdict(float)
    n = 0
    total = 0.0
    for a in attempts:
        s = JobState(a.end_state).value
        counts[s] += 1
        gt = a.runtime * a.gpus
        gpu_time[s] += gt
        n += 1
        total += gt
    if n == 0:
        return []
    rows = []
    for s in sorted(counts, key=lambda k: (-counts[k], k)):
        rows.append(StatusRow(s, 100.0 * counts[s] / n, 100.0 * gpu_time[s] / total if total > 0 else 0.0))
    return rows


def attributed_breakdown(attempts, records) -> List[StatusRow]:
    """Like :func:`status_breakdown` but splits failures by attributed domain.

    ``records`` are :class:`~gpurel.failure_stats.FailureRecord`; a failed
    attempt whose cause is infrastructure is labelled ``HW_INFRA``.
    """
    infra = {(r.job_id, r.attempt_index) for r in records if r.is_infra}
    counts = defaultdict(int)
    gpu_time = defaultdict(float)
    for a in attempts:
        s = JobState(a.end_state).value
        if (a.job_id, a.attempt_index) in infra:
            s = "HW_INFRA"
        counts[s] += 1
        gpu_time[s] += a.runtime * a.gpus
    n = sum(counts.values())
    total = sum(gpu_time.values())
    return [
        StatusRow(s, 100.0 * counts[s] / n, 100.0 * gpu_time[s] / total if total else 0.0)
        for s in sorted(counts, key=lambda k: (-counts[k], k))
    ]
