"""Single-job Monte Carlo for expected ETTR.

Each trial replays one run under the closed-form model's assumptions:
i.i.d. queue waits with mean ``q`` before every attempt, Poisson failures at
rate N*r_f over all scheduled time, a restart cost ``u0`` per attempt, and a
blocking write of ``w_cp`` after every ``dt_cp`` of productive time. A
failure discards work since the last completed write.

Trials are vectorised in fixed-size chunks; each chunk owns a child of one
``SeedSequence`` so results do not depend on how chunks are distributed
over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ettr import EttrParams

CHUNK = 250


@dataclass(frozen=True)
class McResult:
    mean: float
    stderr: float
    trials: int
    mean_failures: float

    def __iter__(self):
        # unpacks as (mean, standard error)
        yield self.mean
        yield self.stderr


def _queue_draws(rng, n, q, queue_model, sigma):
    if q == 0:
        return np.zeros(n)
    if queue_model == "constant":
        return np.full(n, q)
    if queue_model == "lognormal":
        mu = math.log(q) - sigma**2 / 2.0  # mean q
        return rng.lognormal(mu, sigma, n)
    raise ValueError(f"unknown queue model {queue_model!r}")


def _chunk(p: EttrParams, n: int, seed_seq, queue_model, sigma):
    rng = np.random.default_rng(seed_seq)
    a = p.job_rate
    u0, w, dt = p.u0, p.w_cp, p.dt_cp
    remaining = np.full(n, float(p.R))
    Q = np.zeros(n)
    U = np.zeros(n)
    fails = np.zeros(n)
    active = np.ones(n, dtype=bool)
    cycle = dt + w
    while active.any():
        idx = np.flatnonzero(active)
        m = idx.size
        Q[idx] += _queue_draws(rng, m, p.q, queue_model, sigma)
        rem = remaining[idx]
        writes = np.ceil(rem / dt - 1e-12)
        dur = u0 + rem + writes * w
        t_fail = rng.exponential(1.0 / a, m) if a > 0 else np.full(m, np.inf)
        ok = t_fail >= dur
        # finished attempts: all remaining work lands, overheads are the rest
        U[idx[ok]] += dur[ok] - rem[ok]
        remaining[idx[ok]] = 0.0
        active[idx[ok]] = False
        bad = ~ok
        if bad.any():
            j = idx[bad]
            tau = t_fail[bad] - u0
            n_cp = np.where(tau > 0, np.floor(np.maximum(tau, 0.0) / cycle), 0.0)
            committed = np.minimum(n_cp * dt, rem[bad])
            U[j] += t_fail[bad] - committed
            remaining[j] -= committed
            fails[j] += 1
    R = float(p.R)
    return R / (Q + R + U), fails


def monte_carlo_expected_ettr(
    p: EttrParams,
    trials: int = 1000,
    seed: int = 0,
    queue_model: str = "constant",
    queue_sigma: float = 1.0,
    jobs: Optional[int] = 1,
) -> McResult:
    """Mean ETTR over ``trials`` independent runs and its standard error."""
    if trials < 100:
        raise ValueError("insufficient trials: need at least 100")
    sizes = [CHUNK] * (trials // CHUNK)
    if trials % CHUNK:
        sizes.append(trials % CHUNK)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    work = lambda args: _chunk(p, args[0], args[1], queue_model, queue_sigma)  # noqa: E731
    if jobs is not None and jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(work, zip(sizes, children)))
    else:
        parts = [work(a) for a in zip(sizes, children)]
    ettr = np.concatenate([e for e, _ in parts])
    fails = np.concatenate([f for _, f in parts])
    se = float(ettr.std(ddof=1) / math.sqrt(trials))
    return McResult(float(ettr.mean()), se, trials, float(fails.mean()))
