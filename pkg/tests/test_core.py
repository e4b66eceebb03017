import math

import pytest
from hypothesis import given, strategies as st

from gpurel.core import (
    CAUSE_DOMAINS,
    DAY,
    HOUR,
    Domain,
    EmptyRunError,
    FailureCause,
    FailureRate,
    JobAttempt,
    JobRunRecord,
    JobSpec,
    JobState,
    Node,
    Severity,
    check_state_sequence,
    ettr_of,
    nodes_required,
    rounded_gpus,
)


def run(R=0.0, U=0.0, Q=0.0):
    return JobRunRecord("r", Q=Q, R=R, U=U)


def test_ettr_no_overhead():
    assert ettr_of(run(R=10 * HOUR)) == 1.0


def test_ettr_direct_ratio():
    assert ettr_of(run(R=40 * HOUR, U=5 * HOUR, Q=5 * HOUR)) == pytest.approx(0.8)


def test_ettr_zero_productive():
    assert ettr_of(run(R=0, U=2 * HOUR, Q=HOUR)) == 0.0


def test_ettr_empty_run_raises():
    with pytest.raises(EmptyRunError, match="empty run"):
        ettr_of(run())


@given(st.floats(0, 1e7), st.floats(0, 1e7), st.floats(0, 1e7))
def test_ettr_in_unit_interval(r, u, q):
    if r + u + q == 0:
        return
    e = ettr_of(run(R=r, U=u, Q=q))
    assert 0.0 <= e <= 1.0


def test_failure_rate_units():
    r = FailureRate.per_thousand_node_days(6.5)
    assert r.value == pytest.approx(6.5e-3)
    assert r.per_second == pytest.approx(6.5e-3 / 86400.0)
    assert r.per_thousand == pytest.approx(6.5)


@pytest.mark.parametrize("bad", [-1e-9, math.inf, math.nan])
def test_failure_rate_rejects_bad(bad):
    with pytest.raises(ValueError):
        FailureRate(bad)


@pytest.mark.parametrize("gpus,nodes", [(1, 1), (8, 1), (9, 2), (16384, 2048), (131072, 16384)])
def test_nodes_required(gpus, nodes):
    assert nodes_required(gpus) == nodes
    assert JobSpec("j", gpus, 1.0).nodes_required() == nodes


@given(st.integers(1, 100_000), st.integers(1, 16))
def test_nodes_required_is_ceiling(gpus, per):
    n = nodes_required(gpus, per)
    assert (n - 1) * per < gpus <= n * per


def test_rounded_gpus():
    assert [rounded_gpus(g) for g in (1, 8, 9, 130)] == [8, 8, 16, 136]


def test_jobspec_validation():
    with pytest.raises(ValueError):
        JobSpec("j", 0, 1.0)
    with pytest.raises(ValueError):
        JobSpec("j", 1, 0.0)
    with pytest.raises(ValueError):
        JobSpec("j", 1, 1.0, checkpoint_interval=0.0)
    s = JobSpec("j", 1, 1.0)
    assert s.logical_run_id == "j"
    assert s.max_lifetime == 7 * DAY


def test_attempt_invariants():
    with pytest.raises(ValueError):
        JobAttempt("j", 0, 10.0, 5.0, JobState.COMPLETED)
    with pytest.raises(ValueError):
        JobAttempt("j", 0, 0.0, 5.0, JobState.COMPLETED, last_checkpoint_completion=6.0)


def test_terminal_states():
    assert JobState.COMPLETED.is_terminal
    assert JobState.TIMEOUT.is_terminal
    assert not JobState.NODE_FAIL.is_terminal
    assert not JobState.PREEMPTED.is_terminal
    check_state_sequence([JobState.PENDING, JobState.RUNNING, JobState.NODE_FAIL, JobState.PENDING])
    with pytest.raises(ValueError):
        check_state_sequence([JobState.COMPLETED, JobState.RUNNING])


def test_domain_flags_table():
    U, S, H = Domain.USER_PROGRAM, Domain.SYSTEM_SOFTWARE, Domain.HARDWARE_INFRA
    expected = {
        "OOM": {U},
        "GPU_UNAVAILABLE": {S, H},
        "GPU_MEMORY": {H},
        "GPU_DRIVER": {S},
        "NVLINK": {H},
        "IB_LINK": {H},
        "FS_MOUNT": {S},
        "MAIN_MEMORY": {H},
        "ETHLINK": {H},
        "PCIE": {H},
        "NCCL_TIMEOUT": {U, S, H},
        "SYSTEM_SERVICE": {U, S, H},
    }
    for name, doms in expected.items():
        assert CAUSE_DOMAINS[FailureCause(name)] == doms, name
    assert FailureCause.OOM.user_program and not FailureCause.OOM.hardware_infra
    assert not FailureCause.OOM.is_infra
    assert not FailureCause.UNATTRIBUTED.is_infra
    assert FailureCause.IB_LINK.is_infra


def test_severity_defaults():
    assert FailureCause.IB_LINK.default_severity == Severity.HIGH
    assert FailureCause.GPU_DRIVER.default_severity == Severity.LOW


def test_node_effective_rate():
    n = Node("n", base_failure_rate=FailureRate(1e-3), lemon_multiplier=20)
    assert n.effective_failure_rate.value == pytest.approx(0.02)
    assert n.is_lemon
    with pytest.raises(ValueError):
        Node("n", lemon_multiplier=0.5)
