"""Closed-form expected-ETTR estimators, Daly-Young interval, and sweeps."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    HOUR,
    MINUTE,
    FailureRate,
    JobRunRecord,
    JobState,
    as_rate,
)

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class RegimeError(ValueError):
    """Parameters fall outside the region where the expansion is valid."""


class RunExcluded(ValueError):
    """A job run does not qualify for log-based ETTR estimation."""


@dataclass(frozen=True)
class EttrParams:
    n_nodes: int
    r_f: FailureRate
    u0: float
    w_cp: float
    dt_cp: float
    R: float
    q: float = 0.0
    # Expected lost work per interruption as a fraction of dt_cp. 0.5 assumes
    # failures are uncorrelated with checkpoint writes; correlated storage
    # faults push it toward 1.
    loss_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "r_f", as_rate(self.r_f))
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if min(self.u0, self.w_cp, self.q) < 0:
            raise ValueError("durations must be >= 0")
        if not self.dt_cp > 0:
            raise ValueError("dt_cp must be > 0")
        if not self.R > 0:
            raise ValueError("R must be > 0")
        if not 0.0 <= self.loss_fraction <= 1.0:
            raise ValueError("loss_fraction must lie in [0, 1]")

    @property
    def job_rate(self) -> float:
        """Whole-job failure rate N*r_f, per second."""
        return self.n_nodes * self.r_f.per_second

    @property
    def exposure_term(self) -> float:
        """N*r_f*(u0 + dt/2): expected failures during one restart + lost work window."""
        return self.job_rate * (self.u0 + self.loss_fraction * self.dt_cp)

    @property
    def valid_regime(self) -> bool:
        return self.exposure_term < 1.0

    @property
    def mttf(self) -> float:
        return math.inf if self.job_rate == 0 else 1.0 / self.job_rate

    def replace(self, **kw) -> "EttrParams":
        d = dict(self.__dict__)
        d.update(kw)
        return EttrParams(**d)


@dataclass(frozen=True)
class EttrEstimate:
    value: float
    expected_failures: float
    expected_slowdown: float
    is_lower_bound: bool = True


def _require_regime(p: EttrParams) -> None:
    if not p.valid_regime:
        raise RegimeError(
            "formula regime violated: N*r_f*(u0 + dt_cp/2) = "
            f"{p.exposure_term:.4g} >= 1 (n_nodes={p.n_nodes}, r_f={p.r_f.value:g}/node-day, "
            f"u0={p.u0:g}s, dt_cp={p.dt_cp:g}s)"
        )


def expected_failures(p: EttrParams) -> float:
    """Expected number of failures over the whole run, E[N_f]."""
    _require_regime(p)
    a = p.job_rate
    return p.R * a * (1.0 + p.u0 / p.R + p.w_cp / p.dt_cp) / (1.0 - p.exposure_term)


def expected_slowdown(p: EttrParams) -> float:
    """E[S] = (E[U] + E[Q]) / R."""
    nf = expected_failures(p)
    lost = p.loss_fraction * p.dt_cp
    return ((nf + 1.0) * (p.q + p.u0) + nf * lost + p.R * p.w_cp / p.dt_cp) / p.R


def _full_value(a, u0, w, dt, q, R, f=0.5):
    num = 1.0 - a * (u0 + f * dt)
    den = 1.0 + (u0 + q) / R + w / dt + a * q * (1.0 + w / dt - f * dt / R)
    return num / den


def expected_ettr_full(p: EttrParams) -> EttrEstimate:
    """Lower bound on expected ETTR including queue time."""
    _require_regime(p)
    if p.exposure_term > 0.2:
        warnings.warn(
            f"u0 + dt_cp/2 is {p.exposure_term:.0%} of the job MTTF; estimate is loose",
            stacklevel=2,
        )
    value = _full_value(p.job_rate, p.u0, p.w_cp, p.dt_cp, p.q, p.R, p.loss_fraction)
    if not 0.0 <= value <= 1.0:
        raise RegimeError(f"parameters outside model validity: ETTR evaluates to {value:.6g}")
    return EttrEstimate(
        value=float(value),
        expected_failures=expected_failures(p),
        expected_slowdown=expected_slowdown(p),
    )


def expected_ettr_simplified(p: EttrParams) -> float:
    """Long-run, negligible-queue limit: (1 - N r (u0 + dt/2)) / (1 + w/dt)."""
    _require_regime(p)
    a = p.job_rate
    if a * p.q > 0.1:
        warnings.warn("queue time is not small relative to MTTF", stacklevel=2)
    if p.R < 10.0 * (p.q + p.u0 + p.loss_fraction * p.dt_cp):
        warnings.warn("R is not large relative to q + u0 + dt_cp/2", stacklevel=2)
    return (1.0 - p.exposure_term) / (1.0 + p.w_cp / p.dt_cp)


def optimal_checkpoint_interval(w_cp: float, n_nodes: int, r_f) -> float:
    """Daly-Young interval sqrt(2 w_cp / (N r_f)), in seconds."""
    r_f = as_rate(r_f)
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if r_f.value == 0:
        raise ValueError("no finite optimum: failure rate is zero")
    if w_cp <= 0:
        raise ValueError("checkpoint free, interval -> 0")
    return math.sqrt(2.0 * w_cp / (n_nodes * r_f.per_second))


def _golden_max(f, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Maximise a unimodal f on [lo, hi] by golden-section search."""
    a, b = lo, hi
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * (abs(a) + abs(b)):
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def numeric_optimal_interval(
    p: EttrParams,
    grid: Optional[tuple] = None,
    points: int = 400,
    refine: bool = True,
) -> float:
    """Checkpoint interval maximising the full expected-ETTR formula.

    Evaluates a log-spaced grid (ties resolved toward the smaller interval)
    and refines the winner with golden-section search on its neighbours.
    ``p.dt_cp`` is ignored.
    """
    if points < 200:
        raise ValueError("grid needs at least 200 points")
    a = p.job_rate
    f = p.loss_fraction
    if grid is None:
        hi = p.R
        if a > 0 and f > 0:
            hi = min(hi, (1.0 / a - p.u0) / f)
        grid = (1.0, hi)
    lo, hi = float(grid[0]), float(grid[1])
    if not (0 < lo < hi):
        raise ValueError("empty feasible grid")
    dts = np.geomspace(lo, hi, points)
    vals = _full_value(a, p.u0, p.w_cp, dts, p.q, p.R, f)
    feasible = (1.0 - a * (p.u0 + f * dts) > 0) & (vals >= 0) & (vals <= 1)
    if not feasible.any():
        raise ValueError("empty feasible grid")
    vals = np.where(feasible, vals, -np.inf)
    i = int(np.argmax(vals))
    best = float(dts[i])
    if not refine:
        return best

    def obj(x):
        v = _full_value(a, p.u0, p.w_cp, x, p.q, p.R, f)
        return v if 1.0 - a * (p.u0 + f * x) > 0 else -math.inf

    left = float(dts[max(i - 1, 0)])
    right = float(dts[min(i + 1, points - 1)])
    x = _golden_max(obj, left, right)
    return x if obj(x) > obj(best) else best


@dataclass
class SweepResult:
    n_nodes: int
    u0: float
    R: float
    rf_values: np.ndarray  # failures per node-day
    wcp_values: np.ndarray  # seconds
    dt_cp: np.ndarray  # shape (len(rf), len(wcp))
    ettr: np.ndarray  # nan where invalid
    valid: np.ndarray  # regime satisfied
    floored: np.ndarray  # optimal interval fell below the floor

    CSV_COLUMNS = ("r_f", "w_cp", "dt_cp", "ettr", "valid", "floored")

    @property
    def empty(self) -> bool:
        return self.ettr.size == 0

    def rows(self):
        for i, rf in enumerate(self.rf_values):
            for j, w in enumerate(self.wcp_values):
                e = self.ettr[i, j]
                yield {
                    "r_f": float(rf),
                    "w_cp": float(w),
                    "dt_cp": float(self.dt_cp[i, j]),
                    "ettr": None if np.isnan(e) else float(e),
                    "valid": bool(self.valid[i, j]),
                    "floored": bool(self.floored[i, j]),
                }


def ettr_sweep(
    n_nodes: int,
    u0: float,
    R: float,
    rf_range: Sequence[float],
    wcp_range: Sequence[float],
    checkpoint_policy: Union[str, float] = "daly-young",
    min_interval: float = 10.0,
) -> SweepResult:
    """Simplified expected ETTR over a (failure rate x checkpoint cost) grid.

    Rates are failures per node-day, write costs in seconds.
    ``checkpoint_policy`` is ``"daly-young"`` or a fixed interval in seconds.
    """
    rf = np.asarray(list(rf_range), dtype=float)
    wcp = np.asarray(list(wcp_range), dtype=float)
    if rf.size == 0 or wcp.size == 0:
        raise ValueError("no cells")
    a = n_nodes * rf[:, None] / 86400.0
    W = np.broadcast_to(wcp[None, :], (rf.size, wcp.size))
    if checkpoint_policy == "daly-young":
        with np.errstate(divide="ignore", invalid="ignore"):
            dt = np.sqrt(2.0 * W / a)
    else:
        dt = np.full(W.shape, float(checkpoint_policy))
    dt = np.where(np.isfinite(dt), dt, R)
    floored = dt < min_interval
    dt = np.maximum(dt, min_interval)
    num = 1.0 - a * (u0 + dt / 2.0)
    valid = num > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ettr = np.where(valid, num / (1.0 + W / dt), np.nan)
    return SweepResult(n_nodes, u0, R, rf, wcp, dt, ettr, valid, floored)


def job_run_ettr_from_log(
    run: JobRunRecord,
    r_f=6.5e-3,
    u0: float = 5 * MINUTE,
    w_cp: float = 5 * MINUTE,
    dt_cp: Optional[float] = None,
    n_nodes: Optional[int] = None,
    min_scheduled: float = 48 * HOUR,
) -> float:
    """Estimate a logged run's ETTR when only scheduler records are known.

    Every attempt that did not end COMPLETED counts as an interruption costing
    ``u0 + dt_cp/2``; checkpoint writes cost ``w_cp/dt_cp`` of productive time.
    Productive time is whatever scheduled time those overheads leave over.
    """
    scheduled = run.scheduled_time
    if scheduled < min_scheduled:
        raise RunExcluded(
            f"{run.logical_run_id}: {scheduled / HOUR:.1f} h scheduled < {min_scheduled / HOUR:.0f} h threshold"
        )
    if n_nodes is None:
        n_nodes = max(a.n_nodes for a in run.attempts)
    if dt_cp is None:
        dt_cp = optimal_checkpoint_interval(w_cp, n_nodes, r_f)
    n_int = sum(1 for a in run.attempts if a.end_state != JobState.COMPLETED)
    productive = (scheduled - n_int * (u0 + dt_cp / 2.0)) / (1.0 + w_cp / dt_cp)
    productive = max(productive, 0.0)
    return productive / (run.Q + scheduled)
