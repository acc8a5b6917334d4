"""Baseline step-size rules and first-order update rules.

``btls`` is the Armijo backtracking line search used as the L-BFGS
competitor. ADAM and RMSprop are the first-order competitors; ADADELTA is the
outer optimizer for the policy parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numcore import NonFiniteError, UsageError, as_vector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BtlsConfig:
    c1: float = 0.25
    c2: float = 0.5
    t_init: float = 1.0
    max_backtracks: int = 50

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise UsageError("c1 must lie in (0, 1)")
        if not 0 < self.c2 < 1:
            raise UsageError("c2 must lie in (0, 1)")
        if not self.t_init > 0:
            raise UsageError("t_init must be positive")
        if self.max_backtracks < 0:
            raise UsageError("max_backtracks must be nonnegative")


@dataclass(frozen=True)
class BtlsResult:
    t: float
    f_evals: int
    f_new: float | None  # objective at the accepted point, when one was tested
    satisfied: bool

    def __iter__(self):
        # allows ``t, n = btls(...)``
        return iter((self.t, self.f_evals))


def btls(task, x, d, g, cfg: BtlsConfig = BtlsConfig(), f0: float | None = None) -> BtlsResult:
    """Shrink ``t`` by ``c2`` until ``f(x + t d) <= f(x) + c1 t g.d``.

    ``f0`` may be passed to reuse an already computed ``f(x)``; it is not
    counted in ``f_evals``. When no trial satisfies the test the smallest
    step ``c2**max_backtracks * t_init`` is returned with ``satisfied=False``.
    """
    x = as_vector(x)
    d = as_vector(d, x.size)
    g = as_vector(g, x.size)
    if f0 is None:
        f0 = task.value(x)
    slope = float(g @ d)
    if slope >= 0:
        log.warning("btls called with a non-descent direction (g.d = %g)", slope)
    t = cfg.t_init
    evals = 0
    for _ in range(cfg.max_backtracks):
        f = task.value(x + t * d)
        evals += 1
        if not np.isfinite(f):
            raise NonFiniteError("non-finite objective during line search")
        if f <= f0 + cfg.c1 * t * slope:
            return BtlsResult(t, evals, f, True)
        t *= cfg.c2
    # the loop bound is exhausted: hand back the last contraction unchecked
    return BtlsResult(t, evals, None, False)


class _State:
    def __init__(self, n: int):
        self.n = n
        self.step = 0

    def _check(self, g):
        g = as_vector(g)
        if g.size != self.n:
            raise UsageError(f"gradient length {g.size} does not match state length {self.n}")
        return g


class AdamState(_State):
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(n)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)


class RmspropState(_State):
    def __init__(self, n, decay=0.99, eps=1e-8):
        super().__init__(n)
        self.decay, self.eps = decay, eps
        self.avg = np.zeros(n)


class AdadeltaState(_State):
    def __init__(self, n, decay=0.95, eps=1e-6, lr=1.0):
        super().__init__(n)
        self.decay, self.eps, self.lr = decay, eps, lr
        self.sq_grad = np.zeros(n)
        self.sq_delta = np.zeros(n)


def adam_update(state: AdamState, g, lr: float = 0.03) -> np.ndarray:
    g = state._check(g)
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return -lr * m_hat / (np.sqrt(v_hat) + state.eps)


def rmsprop_update(state: RmspropState, g, lr: float = 0.01) -> np.ndarray:
    g = state._check(g)
    state.step += 1
    state.avg = state.decay * state.avg + (1 - state.decay) * g * g
    return -lr * g / (np.sqrt(state.avg) + state.eps)


def adadelta_update(state: AdadeltaState, grad) -> np.ndarray:
    g = state._check(grad)
    state.step += 1
    rho, eps = state.decay, state.eps
    state.sq_grad = rho * state.sq_grad + (1 - rho) * g * g
    delta = -np.sqrt(state.sq_delta + eps) / np.sqrt(state.sq_grad + eps) * g
    state.sq_delta = rho * state.sq_delta + (1 - rho) * delta * delta
    return state.lr * delta
