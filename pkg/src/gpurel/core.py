"""Shared domain vocabulary: units, job/node records, state enumerations.

All durations are float seconds. Failure rates are stored per node-day and
converted to per-second only through :meth:`FailureRate.per_second`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

MINUTE = 60.0
HOUR = 3600.0
SECONDS_PER_DAY = 86400.0
DAY = SECONDS_PER_DAY
DEFAULT_GPUS_PER_NODE = 8
DEFAULT_MAX_LIFETIME = 7 * DAY


class EmptyRunError(ValueError):
    """ETTR requested for a run with zero wallclock time."""


@dataclass(frozen=True, order=True)
class FailureRate:
    """Failures per node-day of runtime."""

    value: float

    def __post_init__(self):
        if not (self.value >= 0.0) or math.isinf(self.value):
            raise ValueError(f"failure rate must be finite and >= 0, got {self.value!r}")

    @classmethod
    def per_thousand_node_days(cls, value: float) -> "FailureRate":
        return cls(value / 1000.0)

    @property
    def per_second(self) -> float:
        return self.value / SECONDS_PER_DAY

    @property
    def per_thousand(self) -> float:
        return self.value * 1000.0

    def __mul__(self, k: float) -> "FailureRate":
        return FailureRate(self.value * k)

    __rmul__ = __mul__


def as_rate(r) -> FailureRate:
    return r if isinstance(r, FailureRate) else FailureRate(float(r))


class JobState(str, enum.Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    NODE_FAIL = "NODE_FAIL"
    PREEMPTED = "PREEMPTED"
    REQUEUED = "REQUEUED"
    TIMEOUT = "TIMEOUT"
    OUT_OF_MEMORY = "OUT_OF_MEMORY"
    CANCELLED = "CANCELLED"

    @property
    def is_terminal(self) -> bool:
        return self in TERMINAL_STATES


TERMINAL_STATES = frozenset(
    {JobState.COMPLETED, JobState.FAILED, JobState.CANCELLED, JobState.TIMEOUT, JobState.OUT_OF_MEMORY}
)
FAILURE_STATES = frozenset({JobState.FAILED, JobState.NODE_FAIL})


def check_state_sequence(states: Sequence[JobState]) -> None:
    """Raise if a state sequence leaves a terminal state."""
    for prev, nxt in zip(states, states[1:]):
        if JobState(prev).is_terminal:
            raise ValueError(f"transition out of terminal state {prev} -> {nxt}")


class Domain(str, enum.Enum):
    USER_PROGRAM = "user_program"
    SYSTEM_SOFTWARE = "system_software"
    HARDWARE_INFRA = "hardware_infra"


class Severity(str, enum.Enum):
    HIGH = "HIGH"
    LOW = "LOW"


class FailureCause(str, enum.Enum):
    OOM = "OOM"
    GPU_UNAVAILABLE = "GPU_UNAVAILABLE"
    GPU_MEMORY = "GPU_MEMORY"
    GPU_DRIVER = "GPU_DRIVER"
    NVLINK = "NVLINK"
    IB_LINK = "IB_LINK"
    FS_MOUNT = "FS_MOUNT"
    MAIN_MEMORY = "MAIN_MEMORY"
    ETHLINK = "ETHLINK"
    PCIE = "PCIE"
    NCCL_TIMEOUT = "NCCL_TIMEOUT"
    SYSTEM_SERVICE = "SYSTEM_SERVICE"
    NODE_FAIL_CATCHALL = "NODE_FAIL_CATCHALL"
    UNATTRIBUTED = "UNATTRIBUTED"

    @property
    def domains(self) -> frozenset:
        return CAUSE_DOMAINS[self]

    @property
    def user_program(self) -> bool:
        return Domain.USER_PROGRAM in self.domains

    @property
    def system_software(self) -> bool:
        return Domain.SYSTEM_SOFTWARE in self.domains

    @property
    def hardware_infra(self) -> bool:
        return Domain.HARDWARE_INFRA in self.domains

    @property
    def is_infra(self) -> bool:
        """True for causes a health check can pin on the cluster rather than the user."""
        if self in (FailureCause.UNATTRIBUTED, FailureCause.OOM):
            return False
        return self.hardware_infra or self.system_software

    @property
    def default_severity(self) -> Severity:
        return Severity.HIGH if self in HIGH_SEVERITY_CAUSES else Severity.LOW


_U, _S, _H = Domain.USER_PROGRAM, Domain.SYSTEM_SOFTWARE, Domain.HARDWARE_INFRA

# Rows of the failure taxonomy table, plus the two bookkeeping causes.
CAUSE_DOMAINS = {
    FailureCause.OOM: frozenset({_U}),
    FailureCause.GPU_UNAVAILABLE: frozenset({_S, _H}),
    FailureCause.GPU_MEMORY: frozenset({_H}),
    FailureCause.GPU_DRIVER: frozenset({_S}),
    FailureCause.NVLINK: frozenset({_H}),
    FailureCause.IB_LINK: frozenset({_H}),
    FailureCause.FS_MOUNT: frozenset({_S}),
    FailureCause.MAIN_MEMORY: frozenset({_H}),
    FailureCause.ETHLINK: frozenset({_H}),
    FailureCause.PCIE: frozenset({_H}),
    FailureCause.NCCL_TIMEOUT: frozenset({_U, _S, _H}),
    FailureCause.SYSTEM_SERVICE: frozenset({_U, _S, _H}),
    FailureCause.NODE_FAIL_CATCHALL: frozenset({_H}),
    FailureCause.UNATTRIBUTED: frozenset({_U, _S, _H}),
}

HIGH_SEVERITY_CAUSES = frozenset(
    {
        FailureCause.GPU_UNAVAILABLE,
        FailureCause.NVLINK,
        FailureCause.GPU_MEMORY,
        FailureCause.PCIE,
        FailureCause.IB_LINK,
        FailureCause.FS_MOUNT,
        FailureCause.NODE_FAIL_CATCHALL,
    }
)

# GPU-side check kinds; each distinct one counts once toward a node's XID tally.
XID_CLASS_CAUSES = frozenset(
    {
        FailureCause.GPU_UNAVAILABLE,
        FailureCause.GPU_MEMORY,
        FailureCause.GPU_DRIVER,
        FailureCause.NVLINK,
        FailureCause.PCIE,
    }
)


class NodeState(str, enum.Enum):
    AVAILABLE = "AVAILABLE"
    DRAINING = "DRAINING"
    REMEDIATION = "REMEDIATION"


@dataclass(frozen=True)
class Node:
    node_id: str
    gpus: int = DEFAULT_GPUS_PER_NODE
    base_failure_rate: FailureRate = FailureRate(0.0)
    lemon_multiplier: float = 1.0
    state: NodeState = NodeState.AVAILABLE

    def __post_init__(self):
        if self.gpus < 1:
            raise ValueError("node needs at least one GPU")
        if self.lemon_multiplier < 1.0:
            raise ValueError("lemon_multiplier must be >= 1")

    @property
    def effective_failure_rate(self) -> FailureRate:
        return self.base_failure_rate * self.lemon_multiplier

    @property
    def is_lemon(self) -> bool:
        return self.lemon_multiplier > 1.0


@dataclass(frozen=True)
class HealthCheckEvent:
    node_id: str
    time: float
    check_kind: FailureCause
    severity: Severity
    is_false_positive: bool = False


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    gpus: int
    required_productive_time: float
    logical_run_id: Optional[str] = None
    priority: int = 0
    submit_time: float = 0.0
    checkpoint_interval: Optional[float] = None  # None disables checkpointing
    checkpoint_write_overhead: float = 0.0
    restart_overhead: float = 0.0
    max_lifetime: float = DEFAULT_MAX_LIFETIME

    def __post_init__(self):
        if self.gpus < 1:
            raise ValueError(f"{self.job_id}: gpus must be >= 1")
        if not self.required_productive_time > 0:
            raise ValueError(f"{self.job_id}: required_productive_time must be > 0")
        if self.checkpoint_interval is not None and not self.checkpoint_interval > 0:
            raise ValueError(f"{self.job_id}: checkpoint_interval must be > 0 when enabled")
        for name in ("submit_time", "checkpoint_write_overhead", "restart_overhead"):
            if getattr(self, name) < 0:
                raise ValueError(f"{self.job_id}: {name} must be >= 0")
        if not self.max_lifetime > 0:
            raise ValueError(f"{self.job_id}: max_lifetime must be > 0")
        if self.logical_run_id is None:
            object.__setattr__(self, "logical_run_id", self.job_id)

    def nodes_required(self, gpus_per_node: int = DEFAULT_GPUS_PER_NODE) -> int:
        return nodes_required(self, gpus_per_node)


def nodes_required(spec_or_gpus, gpus_per_node: int = DEFAULT_GPUS_PER_NODE) -> int:
    if gpus_per_node < 1:
        raise ValueError("gpus_per_node must be >= 1")
    gpus = spec_or_gpus.gpus if hasattr(spec_or_gpus, "gpus") else int(spec_or_gpus)
    return -(-gpus // gpus_per_node)


@dataclass(frozen=True)
class JobAttempt:
    """One scheduler job (allocation) belonging to a logical run."""

    job_id: str
    attempt_index: int
    start_time: float
    end_time: float
    end_state: JobState
    nodes: tuple = ()
    gpus: int = 0
    logical_run_id: Optional[str] = None
    last_checkpoint_completion: Optional[float] = None
    checkpoints_written: int = 0
    failed_node: Optional[str] = None
    preempted_by: Optional[str] = None

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise ValueError(f"{self.job_id}#{self.attempt_index}: end before start")
        if self.last_checkpoint_completion is not None and self.last_checkpoint_completion > self.end_time:
            raise ValueError(f"{self.job_id}#{self.attempt_index}: checkpoint after end")
        if not isinstance(self.nodes, tuple):
            object.__setattr__(self, "nodes", tuple(self.nodes))
        if self.logical_run_id is None:
            object.__setattr__(self, "logical_run_id", self.job_id)

    @property
    def runtime(self) -> float:
        return self.end_time - self.start_time

    @property
    def n_nodes(self) -> int:
        return len(self.nodes) if self.nodes else nodes_required(max(self.gpus, 1))


@dataclass(frozen=True)
class JobRunRecord:
    logical_run_id: str
    attempts: tuple = ()
    Q: float = 0.0
    R: float = 0.0
    U: float = 0.0
    job_id: Optional[str] = None
    gpus: int = 0
    submit_time: float = 0.0
    final_state: JobState = JobState.COMPLETED
    censored: bool = False  # cut off by the simulation horizon
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not isinstance(self.attempts, tuple):
            object.__setattr__(self, "attempts", tuple(self.attempts))
        if min(self.Q, self.R, self.U) < 0:
            raise ValueError(f"{self.logical_run_id}: negative Q/R/U")

    @property
    def wallclock(self) -> float:
        return self.Q + self.R + self.U

    @property
    def scheduled_time(self) -> float:
        return sum(a.runtime for a in self.attempts)


def ettr_of(run: JobRunRecord) -> float:
    """Productive runtime over available wallclock, ``R / (Q + R + U)``."""
    w = run.Q + run.R + run.U
    if w <= 0:
        raise EmptyRunError(f"empty run: {run.logical_run_id} has zero wallclock time")
    return run.R / w


def rounded_gpus(gpus: int, multiple: int = DEFAULT_GPUS_PER_NODE) -> int:
    """Round a GPU count up to the next multiple (used for size bucketing)."""
    return -(-int(gpus) // multiple) * multiple


def sorted_by(items: Iterable, key) -> bool:
    prev = None
    for it in items:
        k = key(it)
        if prev is not None and k < prev:
            return False
        prev = k
    return True
