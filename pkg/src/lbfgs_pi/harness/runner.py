"""Run optimizers on tasks and record per-iteration traces."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..lbfgs import DEFAULT_MEMORY, LbfgsHistory
from ..numcore import NonFiniteError, UsageError, as_vector
from ..policy import PolicyParams, policy_step
from ..steppers import (
    AdamState,
    BtlsConfig,
    RmspropState,
    adam_update,
    btls,
    rmsprop_update,
)

LBFGS_KINDS = ("lbfgs_pi", "lbfgs_baseline", "lbfgs_btls")
FIRST_ORDER_KINDS = ("adam", "rmsprop")
KINDS = LBFGS_KINDS + FIRST_ORDER_KINDS


@dataclass
class OptimizerSpec:
    kind: str
    theta: PolicyParams | None = None
    btls: BtlsConfig = field(default_factory=BtlsConfig)
    lr: float | None = None
    m: int = DEFAULT_MEMORY
    name: str | None = None
    # forces the step sequence; only used to compare direction computations
    fixed_steps: list | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown optimizer kind {self.kind!r}")
        if self.kind == "lbfgs_pi" and self.theta is None:
            raise UsageError("lbfgs_pi needs policy parameters")
        if self.lr is None:
            self.lr = {"adam": 0.03, "rmsprop": 0.01}.get(self.kind)
        if self.name is None:
            self.name = self.kind


@dataclass(frozen=True)
class StopCriteria:
    K_max: int = 800
    grad_eps: float = 1e-8

    def __post_init__(self):
        if self.K_max < 1:
            raise UsageError("K_max must be at least 1")
        if not self.grad_eps > 0:
            raise UsageError("grad_eps must be positive")


@dataclass
class IterRow:
    k: int
    f: float
    gnorm: float
    t: float  # step taken from this iterate; nan on the last row
    seconds: float
    f_evals: int


@dataclass
class RunRecord:
    task_id: str
    optimizer: str
    rows: list = field(default_factory=list)
    status: str = "ok"
    warmup: bool = False

    @property
    def f_star(self) -> float:
        return min(r.f for r in self.rows)

    @property
    def f_final(self) -> float:
        return self.rows[-1].f

    @property
    def iterations(self) -> int:
        return self.rows[-1].k if self.rows else 0


def _lbfgs_step(spec, h, task, x, f, g, s_prev, y_prev, k):
    d = h.two_loop(g)
    evals = 0
    if spec.fixed_steps is not None:
        t = float(spec.fixed_steps[k])
    elif spec.kind == "lbfgs_baseline":
        t = 1.0
    elif spec.kind == "lbfgs_btls":
        res = btls(task, x, d, g, spec.btls, f0=f)
        t, evals = res.t, res.f_evals
    else:
        t = policy_step(spec.theta, d, g, s_prev, y_prev).t
    return d, t, evals


def run_optimizer(task, x0, spec: OptimizerSpec, stop: StopCriteria = StopCriteria(),
                  task_id: str | None = None, keep_directions: list | None = None) -> RunRecord:
    """Iterate ``spec`` from ``x0`` until ``K_max`` steps or ``|g| < grad_eps``.

    Divergence (non-finite objective, gradient or step) ends the run with
    ``status='diverged'``; the rows recorded so far are kept.
    """
    x = as_vector(x0, task.dimension).copy()
    rec = RunRecord(task_id or task.id, spec.name)
    clock = time.perf_counter
    t0 = clock()
    try:
        f, g = task.value_and_grad(x)
    except NonFiniteError:
        rec.status = "diverged"
        return rec
    evals = 1
    gn = float(np.linalg.norm(g))
    rec.rows.append(IterRow(0, f, gn, math.nan, clock() - t0, evals))

    h = LbfgsHistory(spec.m)
    s_prev = np.zeros_like(x)
    y_prev = np.zeros_like(x)
    if spec.kind == "adam":
        opt = AdamState(x.size)
    elif spec.kind == "rmsprop":
        opt = RmspropState(x.size)

    for k in range(stop.K_max):
        if gn < stop.grad_eps:
            break
        t = math.nan
        try:
            # overflow surfaces as a non-finite iterate and is recorded as divergence
            with np.errstate(over="ignore", invalid="ignore"):
                if spec.kind in LBFGS_KINDS:
                    d, t, ls_evals = _lbfgs_step(spec, h, task, x, f, g, s_prev, y_prev, k)
                    if keep_directions is not None:
                        keep_directions.append(d.copy())
                    evals += ls_evals
                    x_new = x + t * d
                else:
                    upd = adam_update if spec.kind == "adam" else rmsprop_update
                    t = spec.lr
                    x_new = x + upd(opt, g, spec.lr)
                if not np.all(np.isfinite(x_new)):
                    raise NonFiniteError("non-finite iterate")
                f_new, g_new = task.value_and_grad(x_new)
        except NonFiniteError:
            rec.rows[-1].t = t
            rec.status = "diverged"
            break
        evals += 1
        rec.rows[-1].t = t
        if spec.kind in LBFGS_KINDS:
            s_prev, y_prev = x_new - x, g_new - g
            h.push_pair(s_prev, y_prev)
        x, f, g = x_new, f_new, g_new
        gn = float(np.linalg.norm(g))
        rec.rows.append(IterRow(k + 1, f, gn, math.nan, clock() - t0, evals))
    return rec


def run_many(jobs, stop: StopCriteria = StopCriteria(), threads: int = 1, warmup: int = 0):
    """Run ``(task, x0, spec, task_id)`` jobs, possibly on several threads.

    Results come back in job order. The first ``warmup`` runs of each
    optimizer name are flagged so aggregates can drop them.
    """
    jobs = list(jobs)

    def one(job):
        task, x0, spec, tid = job
        return run_optimizer(task, x0, spec, stop, tid)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            records = list(pool.map(one, jobs))
    else:
        records = [one(j) for j in jobs]
    seen: dict[str, int] = {}
    for rec in records:
        c = seen.get(rec.optimizer, 0)
        rec.warmup = c < warmup
        seen[rec.optimizer] = c + 1
    return records
