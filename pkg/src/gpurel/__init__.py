"""Reliability modelling for large gang-scheduled GPU clusters."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    EmptyRunError,
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
    ettr_of,
)
from .ettr import (  # noqa: E402
    EttrParams,
    RegimeError,
    ettr_sweep,
    expected_ettr_full,
    expected_ettr_simplified,
    expected_failures,
    numeric_optimal_interval,
    optimal_checkpoint_interval,
)
from .failure_stats import (  # noqa: E402
    attribute_failures,
    estimate_failure_rate,
    mttf_by_job_size,
    project_mttf,
    rate_confidence_interval,
    rolling_failure_rate,
)
from .simulator import ClusterConfig, SimTrace, run_simulation  # noqa: E402
from .montecarlo import monte_carlo_expected_ettr  # noqa: E402
