"""Truncated backpropagation through time for the step-size policy.

An outer step unrolls ``K`` policy-driven L-BFGS iterations on one task,
records them on a :class:`~lbfgs_pi.numcore.Tape`, and backpropagates the
weighted sum of objective values to the policy parameters. Inner gradients
``g_k`` and curvature vectors ``y_k`` enter the tape as constants, so the
objective's second derivatives are never needed: each ``f(x_{k+1})`` is an
external node whose slope with respect to ``x_{k+1}`` is ``g_{k+1}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .lbfgs import DEFAULT_MEMORY, LbfgsHistory, Pair, push_pair_tape, two_loop_tape
from .numcore import NonFiniteError, Rng, Tape, UsageError, as_vector, value_of
from .policy import ParamVars, PolicyParams, policy_step, policy_step_tape
from .steppers import AdadeltaState, adadelta_update

log = logging.getLogger(__name__)


@dataclass
class InnerState:
    """Where an inner L-BFGS run currently stands."""

    x: np.ndarray
    f: float
    g: np.ndarray
    history: LbfgsHistory
    s_prev: np.ndarray
    y_prev: np.ndarray

    @classmethod
    def start(cls, task, x0, m: int = DEFAULT_MEMORY) -> "InnerState":
        x0 = as_vector(x0, task.dimension).copy()
        f, g = task.value_and_grad(x0)
        z = np.zeros_like(x0)
        return cls(x0, f, g, LbfgsHistory(m), z, z.copy())


@dataclass
class UnrollTrace:
    """Values needed to replay an unroll with frozen gradients."""

    gs: list  # g_0 .. g_K
    fs: list  # f_0 .. f_K
    xs: list  # x_0 .. x_K
    ys: list  # y_0 .. y_{K-1}
    accepted: list
    taus: list


@dataclass
class UnrollResult:
    loss: float
    x_final: np.ndarray
    grad_theta: np.ndarray
    diverged: bool
    converged: bool = False
    steps: int = 0
    state: InnerState | None = None
    trace: UnrollTrace | None = None


def _weights(w, K):
    if w is None:
        return np.ones(K)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (K,):
        raise UsageError(f"need {K} weights, got {w.shape}")
    if np.any(w < 0):
        raise UsageError("weights must be nonnegative")
    return w


def unroll(theta: PolicyParams, task, state: InnerState, K: int, w=None,
           stop_eps: float = 0.0) -> UnrollResult:
    """Run ``K`` policy steps from ``state`` on a tape and return loss and d loss / d theta.

    Stops early once ``|g| < stop_eps``; the remaining terms are then absent
    from the loss.
    """
    if K < 1:
        raise UsageError("K must be at least 1")
    w = _weights(w, K)
    tape = Tape()
    pv = ParamVars.record(tape, theta)
    h = state.history.detached()
    x = state.x
    f, g = state.f, state.g
    s_prev, y_prev = state.s_prev, state.y_prev
    trace = UnrollTrace([g], [f], [np.array(x)], [], [], [])
    terms = []
    converged = False
    k = 0
    try:
        while k < K:
            d = two_loop_tape(tape, h, g)
            tau, t = policy_step_tape(tape, pv, d, g, s_prev, y_prev)
            s = tape.mul(t, d)
            x_new = tape.add(x, s)
            f_new, g_new = task.value_and_grad(x_new.value)
            terms.append(tape.external(x_new, f_new, g_new))
            y = g_new - g
            accepted = push_pair_tape(tape, h, s, y)
            trace.gs.append(g_new)
            trace.fs.append(f_new)
            trace.xs.append(np.array(x_new.value))
            trace.ys.append(y)
            trace.accepted.append(accepted)
            trace.taus.append(tau.value)
            s_prev, y_prev = s, y
            x, f, g = x_new, f_new, g_new
            k += 1
            if np.linalg.norm(g) < stop_eps:
                converged = True
                break
        wk = w[:k]
        root = tape.dot(tape.stack(terms), wk)
        adj = tape.backward(root)
        grad = pv.flat_grad(adj)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("non-finite policy gradient")
    except (NonFiniteError, FloatingPointError) as exc:
        log.debug("unroll diverged on %s: %s", getattr(task, "id", "?"), exc)
        return UnrollResult(np.nan, np.array(value_of(x)), np.zeros(theta.size), True, steps=k)

    x_final = np.array(value_of(x))
    new_state = InnerState(
        x_final, f, g, h.detached(), np.array(value_of(s_prev)), np.array(y_prev)
    )
    return UnrollResult(float(root.value), x_final, grad, False, converged, k, new_state, trace)


def frozen_unroll_loss(theta: PolicyParams, state: InnerState, trace: UnrollTrace, w=None) -> float:
    """Replay an unroll with every ``g`` and ``y`` held at their recorded values.

    Objective values are replaced by their first-order expansion around the
    recorded iterates, ``f_k + g_k . (x - x_k)``. The derivative of this
    function at the recorded ``theta`` is exactly what :func:`unroll`
    backpropagates, so central differences of it check the tape.
    Uses only the plain (untaped) two-loop and policy code paths.
    """
    K = len(trace.ys)
    w = np.ones(K) if w is None else np.asarray(w, dtype=np.float64)[:K]
    h = state.history.detached()
    x = state.x.copy()
    s_prev, y_prev = state.s_prev, state.y_prev
    loss = 0.0
    for k in range(K):
        g = trace.gs[k]
        d = h.two_loop(g)
        t = policy_step(theta, d, g, s_prev, y_prev).t
        x_new = x + t * d
        s = x_new - x
        y = trace.ys[k]
        loss += w[k] * (trace.fs[k + 1] + float(trace.gs[k + 1] @ (x_new - trace.xs[k + 1])))
        if trace.accepted[k]:
            sy = float(s @ y)
            h.pairs.append(Pair(s, y, 1.0 / sy, sy, float(y @ y)))
        s_prev, y_prev = s, y
        x = x_new
    return loss


def rollout_loss(theta: PolicyParams, task, x0, K: int, w=None, m: int = DEFAULT_MEMORY) -> float:
    """Forward-only ``sum_k w_k f(x_k)`` for ``K`` policy steps from ``x0``."""
    w = _weights(w, K)
    st = InnerState.start(task, x0, m)
    x, g, h = st.x, st.g, st.history
    s_prev, y_prev = st.s_prev, st.y_prev
    loss = 0.0
    for k in range(K):
        d = h.two_loop(g)
        t = policy_step(theta, d, g, s_prev, y_prev).t
        x_new = x + t * d
        f_new, g_new = task.value_and_grad(x_new)
        loss += w[k] * f_new
        s, y = x_new - x, g_new - g
        h.push_pair(s, y)
        x, g, s_prev, y_prev = x_new, g_new, s, y
    return loss


def mean_rollout_loss(theta: PolicyParams, task_set, K: int, w=None, m: int = DEFAULT_MEMORY) -> float:
    losses = []
    for task, x0 in task_set:
        try:
            losses.append(rollout_loss(theta, task, x0, K, w, m))
        except (NonFiniteError, FloatingPointError):
            losses.append(np.inf)
    return float(np.mean(losses))


# training loop ----------------------------------------------------------------------


@dataclass
class TrainConfig:
    K: int = 50
    T: int = 8
    epochs: int = 50
    w: list | None = None
    resample_eps: float = 1e-10
    seed: int = 0
    m: int = DEFAULT_MEMORY
    shuffle: bool = True

    def __post_init__(self):
        if self.K < 1 or self.T < 1:
            raise UsageError("K and T must be at least 1")
        if self.epochs < 0:
            raise UsageError("epochs must be nonnegative")
        if self.w is not None:
            _weights(self.w, self.K)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def losses(self, epoch: int | None = None) -> list:
        return [r["loss"] for r in self.records
                if not r["diverged"] and (epoch is None or r["epoch"] == epoch)]

    @property
    def n_updates(self) -> int:
        return sum(1 for r in self.records if r["updated"])

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def train(theta0: PolicyParams, task_set, cfg: TrainConfig = TrainConfig(), progress=None):
    """Fit the policy by ADADELTA on TBPTT gradients over ``task_set``.

    Each (task, epoch) is one trajectory: it starts from the task's own
    ``x0`` and runs ``T`` outer steps, each continuing from where the
    previous one stopped. A fresh start (same per-coordinate scale as the
    task's ``x0``) is drawn after convergence or divergence.
    """
    task_set = list(task_set)
    if not task_set:
        raise UsageError("empty task set")
    theta = theta0.copy()
    flat = theta.flat()
    opt = AdadeltaState(flat.size)
    rng = Rng(cfg.seed)
    tlog = TrainLog()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(task_set)) if cfg.shuffle else np.arange(len(task_set))
        for ti in order:
            task, x0 = task_set[ti]
            x0 = as_vector(x0)
            scale = float(np.sqrt(np.mean(x0 * x0))) or 1.0
            state = InnerState.start(task, x0, cfg.m)
            for j in range(cfg.T):
                f_start = state.f
                res = unroll(theta, task, state, cfg.K, cfg.w, cfg.resample_eps)
                resample = res.diverged or res.converged
                updated = not res.diverged
                if updated:
                    flat = flat + adadelta_update(opt, res.grad_theta)
                    theta = theta.with_flat(flat)
                tlog.append(
                    epoch=epoch,
                    task_id=task.id,
                    outer_step=j,
                    loss=None if res.diverged else res.loss,
                    grad_norm=None if res.diverged else float(np.linalg.norm(res.grad_theta)),
                    diverged=res.diverged,
                    f_start=f_start,
                    f_end=None if res.diverged else res.state.f,
                    resampled=resample,
                    updated=updated,
                )
                if resample:
                    state = _fresh_start(task, rng, scale, cfg.m)
                else:
                    state = res.state
        if progress is not None:
            progress(epoch, tlog)
    return theta, tlog


def _fresh_start(task, rng: Rng, scale: float, m: int) -> InnerState:
    # a diverging draw is retried a few times before giving up
    for _ in range(10):
        try:
            return InnerState.start(task, rng.randn(task.dimension, scale), m)
        except NonFiniteError:
            continue
    raise NonFiniteError(f"could not draw a finite start for task {task.id}")


def warm_start_train(theta_pretrained: PolicyParams, new_task_set, cfg: TrainConfig = TrainConfig(),
                     progress=None):
    """Continue training a previously learned policy on a new task family."""
    return train(theta_pretrained, new_task_set, cfg, progress)
