import math
import random
from dataclasses import replace
from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

from gpurel.core import DAY, HOUR, FailureCause, HealthCheckEvent, JobAttempt, JobState, Node, NodeState, Severity
from gpurel.lemon import (
    DEFAULT_THRESHOLDS,
    SIGNALS,
    LemonVerdict,
    NodeSignals,
    Thresholds,
    ab_compare_removal,
    benchmark_scenario,
    classify_lemons,
    compute_node_signals,
    evaluate_detection,
    large_job_failure_fraction,
    tune_thresholds,
)
from gpurel.simulator import NodeTransition, run_simulation


def fake_trace(attempts=(), health=(), transitions=(), exclusions=(), nodes=("a", "b", "c"), end=30 * DAY):
    return SimpleNamespace(
        attempts=list(attempts),
        health_events=list(health),
        node_transitions=list(transitions),
        exclusions=list(exclusions),
        nodes=[Node(n) for n in nodes],
        end_time=end,
        start_time=0.0,
    )


def att(jid, s, e, state, nodes, failed=None, idx=0):
    return JobAttempt(jid, idx, s, e, state, tuple(nodes), 8 * len(nodes), failed_node=failed)


# -- signals -------------------------------------------------------------------------


def test_completed_only_node_has_zero_counters():
    tr = fake_trace([att("j1", 0, DAY, JobState.COMPLETED, ["a"]), att("j2", DAY, 2 * DAY, JobState.COMPLETED, ["a", "b"])])
    sig = {s.node_id: s for s in compute_node_signals(tr)}
    assert all(sig["a"].value(k) == 0 for k in SIGNALS)


def test_multi_node_failures_counted_on_failing_node():
    atts = [att(f"j{i}", (10 + i) * DAY, (10 + i) * DAY + HOUR, JobState.NODE_FAIL, ["a", "b"], failed="a") for i in range(3)]
    sig = {s.node_id: s for s in compute_node_signals(fake_trace(atts))}
    assert sig["a"].multi_node_node_fails == 3
    assert sig["b"].multi_node_node_fails == 0


def test_single_node_failure_rate():
    atts = [att("j0", 10 * DAY, 10 * DAY + HOUR, JobState.NODE_FAIL, ["c"], failed="c")]
    atts += [att(f"k{i}", DAY * (i + 11), DAY * (i + 11) + HOUR, JobState.COMPLETED, ["c"]) for i in range(3)]
    sig = {s.node_id: s for s in compute_node_signals(fake_trace(atts))}
    assert sig["c"].single_node_node_fails == 1
    assert sig["c"].single_node_node_failure_rate == pytest.approx(0.25)


def test_window_longer_than_log_rejected():
    with pytest.raises(ValueError, match="longer than log span"):
        compute_node_signals(fake_trace(end=10 * DAY), window=28 * DAY)


def _random_log(seed, nodes=("a", "b", "c", "d"), span=60 * DAY):
    rng = random.Random(seed)
    atts, health, trans, excl = [], [], [], []
    for i in range(80):
        s = rng.uniform(0, span - DAY)
        e = s + rng.uniform(60, DAY)
        used = rng.sample(nodes, rng.choice([1, 1, 2, 3]))
        state = rng.choice([JobState.COMPLETED, JobState.NODE_FAIL, JobState.NODE_FAIL, JobState.PREEMPTED])
        atts.append(att(f"j{i:03d}", s, e, state, used, failed=used[0] if state == JobState.NODE_FAIL else None))
    for i in range(60):
        kind = rng.choice(list(FailureCause)[:8])
        health.append(HealthCheckEvent(rng.choice(nodes), rng.uniform(0, span), kind, Severity.HIGH))
    for i in range(30):
        trans.append(NodeTransition(rng.uniform(0, span), rng.choice(nodes), NodeState.REMEDIATION, rng.choice(["failure", "false_positive"])))
    for i in range(20):
        excl.append((rng.uniform(0, span), rng.choice(nodes), f"j{rng.randrange(80):03d}"))
    health.sort(key=lambda e: e.time)
    trans.sort(key=lambda x: x.time)
    return atts, health, trans, excl


def brute_force_signals(atts, health, trans, excl, node, lo, hi):
    from gpurel.core import XID_CLASS_CAUSES

    def inside(t):
        return lo < t <= hi

    single_jobs = [a for a in atts if a.nodes == (node,) and inside(a.end_time) and a.end_state != JobState.RUNNING]
    single_fail = [a for a in single_jobs if a.end_state == JobState.NODE_FAIL]
    multi = [a for a in atts if len(a.nodes) > 1 and a.failed_node == node and a.end_state == JobState.NODE_FAIL and inside(a.end_time)]
    return dict(
        excl_jobid_count=len({j for t, n, j in excl if n == node and inside(t)}),
        xid_cnt=len({e.check_kind for e in health if e.node_id == node and e.check_kind in XID_CLASS_CAUSES and inside(e.time)}),
        tickets=sum(1 for x in trans if x.node_id == node and x.reason == "failure" and inside(x.time)),
        out_count=sum(1 for x in trans if x.node_id == node and inside(x.time)),
        multi_node_node_fails=len(multi),
        single_node_node_fails=len(single_fail),
        single_node_node_failure_rate=len(single_fail) / len(single_jobs) if single_jobs else 0.0,
    )


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("at", [30 * DAY, 45 * DAY, 60 * DAY])
def test_signals_match_brute_force_on_shifted_windows(seed, at):
    atts, health, trans, excl = _random_log(seed)
    tr = fake_trace(atts, health, trans, excl, nodes=("a", "b", "c", "d"), end=60 * DAY)
    got = {s.node_id: s for s in compute_node_signals(tr, window=28 * DAY, at=at)}
    for node in "abcd":
        want = brute_force_signals(atts, health, trans, excl, node, at - 28 * DAY, at)
        for k, v in want.items():
            assert got[node].value(k) == pytest.approx(v), (node, k)


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.randoms())
def test_signals_invariant_to_log_order(seed, rnd):
    atts, health, trans, excl = _random_log(seed)
    a = compute_node_signals(fake_trace(atts, health, trans, excl, nodes=("a", "b", "c", "d"), end=60 * DAY))
    shuffled = list(atts)
    rnd.shuffle(shuffled)
    ex2 = list(excl)
    rnd.shuffle(ex2)
    b = compute_node_signals(fake_trace(shuffled, health, trans, ex2, nodes=("d", "c", "b", "a"), end=60 * DAY))
    assert a == b
    for s in a:
        assert 0.0 <= s.single_node_node_failure_rate <= 1.0
        assert all(s.value(k) >= 0 for k in SIGNALS)


# -- classification ---------------------------------------------------------------------


def test_all_zero_not_flagged():
    (v,) = classify_lemons([NodeSignals("a")], DEFAULT_THRESHOLDS)
    assert not v.flagged and v.triggering_signals == ()


def test_everything_exceeded_lists_every_signal():
    cut = {k: 1.0 for k in SIGNALS}
    big = NodeSignals("a", **{k: 5 for k in SIGNALS})
    (v,) = classify_lemons([big], Thresholds(cut))
    assert v.flagged and set(v.triggering_signals) == set(SIGNALS)


def test_missing_threshold_for_rule_signal():
    with pytest.raises(ValueError, match="missing threshold"):
        classify_lemons([NodeSignals("a")], DEFAULT_THRESHOLDS, rule_signals=["out_count"])


def test_unknown_signal_or_rule_rejected():
    with pytest.raises(ValueError):
        Thresholds({"bogus": 1})
    with pytest.raises(ValueError):
        Thresholds({"tickets": 1}, rule="majority")


def test_k_of_n_rule():
    th = Thresholds({"tickets": 2, "xid_cnt": 2}, rule="k-of-n", k=2)
    one = NodeSignals("a", tickets=3)
    both = NodeSignals("b", tickets=3, xid_cnt=2)
    va, vb = classify_lemons([one, both], th)
    assert not va.flagged and vb.flagged


def test_flagged_verdict_needs_signal():
    with pytest.raises(ValueError):
        LemonVerdict("a", True, ())


counters = st.integers(0, 10)


@given(st.lists(counters, min_size=6, max_size=6), st.integers(0, 5), st.integers(1, 5))
def test_flagging_monotone_under_any_of(vals, which, bump):
    names = SIGNALS[1:]
    s = NodeSignals("a", **dict(zip(names, vals)))
    raised = replace(s, **{names[which]: getattr(s, names[which]) + bump})
    th = Thresholds({"xid_cnt": 4, "tickets": 4, "multi_node_node_fails": 3, "single_node_node_fails": 3, "out_count": 6})
    (a,), (b,) = classify_lemons([s], th), classify_lemons([raised], th)
    assert b.flagged or not a.flagged


# -- evaluation ---------------------------------------------------------------------------


def test_perfect_verdicts():
    truth = {f"n{i}": i < 3 for i in range(10)}
    verdicts = [LemonVerdict(n, t, ("tickets",) if t else ()) for n, t in truth.items()]
    m = evaluate_detection(verdicts, truth)
    assert m.precision == 1 and m.recall == 1 and m.false_positive_rate == 0


def test_all_flagged_precision_equals_prevalence():
    truth = {f"n{i}": i < 10 for i in range(1000)}
    verdicts = [LemonVerdict(n, True, ("tickets",)) for n in truth]
    m = evaluate_detection(verdicts, truth)
    assert m.precision == pytest.approx(0.01)
    assert m.flagged_fraction == 1.0


def test_disjoint_ids():
    with pytest.raises(ValueError, match="no node ids"):
        evaluate_detection([LemonVerdict("x", False)], {"y": True})


def test_tune_requires_positives():
    with pytest.raises(ValueError):
        tune_thresholds([NodeSignals("a")], {"a": False})


# -- simulated benchmark (reduced size) ------------------------------------------------------------


def _small(seed=0, frac=0.03, mult=50.0, **kw):
    return benchmark_scenario(seed, node_count=300, lemon_fraction=frac, lemon_multiplier=mult, days=40, job_count=9000, **kw)


AB_THRESHOLDS = Thresholds({"multi_node_node_fails": 2, "single_node_node_fails": 2}, set_id="ab")


@pytest.fixture(scope="module")
def small_ab():
    cfg, wl = _small()
    return ab_compare_removal(cfg, wl, AB_THRESHOLDS, seed=0)


def test_ab_reduces_large_job_failures_with_strong_lemons(small_ab):
    assert small_ab.large_jobs_without > 100
    assert small_ab.large_job_failure_fraction_with < small_ab.large_job_failure_fraction_without
    assert small_ab.relative_reduction > 0.2


def test_lemons_host_fewer_attempts_after_flag(small_ab):
    off, on = small_ab.traces
    first_flag = {}
    for t, n in on.lemon_flags:
        first_flag.setdefault(n, t)
    lemons = [n for n, is_lemon in on.ground_truth.items() if is_lemon and n in first_flag]
    assert lemons

    def hosted(trace, node, after):
        return sum(1 for a in trace.attempts if node in a.nodes and a.start_time >= after)

    assert sum(hosted(on, n, first_flag[n]) for n in lemons) < sum(hosted(off, n, first_flag[n]) for n in lemons)


def test_lemon_remediation_only_on_flagged_nodes(small_ab):
    _, on = small_ab.traces
    flagged = set(small_ab.flagged_nodes)
    spans = [s for s in on.remediation_spans() if s.reason == "lemon"]
    assert {s.node_id for s in spans} <= flagged
    assert len(spans) <= len(on.lemon_flags)


def test_ab_no_lemons_gives_equal_fractions():
    cfg, wl = benchmark_scenario(1, node_count=128, lemon_fraction=0.0, days=20, job_count=2000)
    r = ab_compare_removal(cfg, wl, Thresholds({"multi_node_node_fails": 100}), seed=1)
    assert r.large_job_failure_fraction_with == r.large_job_failure_fraction_without
    assert r.flagged_nodes == []


def test_large_job_failure_fraction_counts_ended_only():
    atts = [
        JobAttempt("a", 0, 0, 1, JobState.NODE_FAIL, (), 512),
        JobAttempt("b", 0, 0, 1, JobState.COMPLETED, (), 1024),
        JobAttempt("c", 0, 0, 1, JobState.RUNNING, (), 1024),
        JobAttempt("d", 0, 0, 1, JobState.NODE_FAIL, (), 64),
    ]
    assert large_job_failure_fraction(atts) == (0.5, 2)
    assert math.isnan(large_job_failure_fraction(atts[3:])[0])


def test_tuned_detection_on_reduced_benchmark():
    cfg, wl = _small(seed=2, frac=0.02, mult=20.0)
    tr = run_simulation(cfg, wl, seed=2)
    sig = compute_node_signals(tr, window=40 * DAY)
    th = tune_thresholds(sig, tr.ground_truth)
    m = evaluate_detection(classify_lemons(sig, th), tr.ground_truth)
    assert m.recall >= 0.5
    assert m.precision >= 0.85
