"""Independent reference computations used to verify the fast code paths.

None of these share code with what they check: the dense BFGS recursion
forms ``H`` explicitly, and gradients are compared against central
differences of plain forward evaluations.
"""

from __future__ import annotations

import numpy as np

from .numcore import Rng
from .lbfgs import LbfgsHistory
from .policy import init_params
from .trainer import InnerState, frozen_unroll_loss, unroll


def dense_bfgs_inverse(pairs, gamma: float) -> np.ndarray:
    """``H`` from ``gamma I`` updated oldest-first with ``(I - r s y^T) H (I - r y s^T) + r s s^T``."""
    s0 = np.asarray(pairs[0][0]) if pairs else None
    n = s0.size if s0 is not None else 0
    H = gamma * np.eye(n)
    for s, y in pairs:
        r = 1.0 / float(s @ y)
        V = np.eye(n) - r * np.outer(y, s)
        H = V.T @ H @ V + r * np.outer(s, s)
    return H


def central_diff(fun, x, h: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (fun(xp) - fun(xm)) / (2 * h)
    return out


def rel_err(a, b, floor: float = 1e-8, rel_floor: float = 0.0) -> float:
    """Largest entrywise ``|a - b| / max(|a|, |b|, floor, rel_floor * max|b|)``.

    ``rel_floor`` keeps entries far below the vector's scale from being judged
    on rounding noise alone.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not a.size:
        return 0.0
    floor = max(floor, rel_floor * float(np.max(np.abs(b))))
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / den))


def random_history(rng: Rng, n: int, m: int, count: int | None = None) -> LbfgsHistory:
    """History of ``count`` (default ``m``) random pairs with ``s.y > 0``."""
    gen = rng.generator
    h = LbfgsHistory(m)
    # SPD matrix so y = A s has positive curvature
    M = gen.standard_normal((n, n))
    A = M @ M.T + n * np.eye(n)
    while len(h) < (m if count is None else min(count, m)):
        s = gen.standard_normal(n)
        h.push_pair(s, A @ s)
    return h


def two_loop_oracle_error(seed: int, n: int, m: int) -> float:
    rng = Rng(seed)
    h = random_history(rng, n, m)
    g = rng.randn(n)
    d = h.two_loop(g)
    pairs = [(p.s, p.y) for p in h.pairs]
    H = dense_bfgs_inverse(pairs, h.gamma())
    ref = -H @ g
    return float(np.linalg.norm(d - ref) / np.linalg.norm(ref))


# entries below this fraction of the largest are compared on an absolute scale
GRAD_REL_FLOOR = 1e-3


def tbptt_check(task, x0, theta, K: int, h: float = 1e-5):
    """Tape gradient and frozen-input central differences for one unroll.

    Returns ``(grad_tape, grad_fd, taus)``.
    """
    state = InnerState.start(task, x0)
    res = unroll(theta, task, state, K)
    flat = theta.flat()
    fd = central_diff(lambda v: frozen_unroll_loss(theta.with_flat(v), state, res.trace), flat, h)
    return res.grad_theta, fd, res.trace


def interior_policy(rng: Rng, task, x0, K: int, margin: float = 1e-3, tries: int = 200, n_h: int = 6):
    """Draw random policy parameters whose taus all stay ``margin`` inside the clip bounds."""
    for _ in range(tries):
        theta = init_params(rng, n_h, scale=rng.generator.uniform(0.02, 0.3))
        theta.b01[:] = 0.5 * rng.generator.standard_normal(n_h)
        theta.b02[:] = rng.generator.standard_normal(n_h)
        res = unroll(theta, task, InnerState.start(task, x0), K)
        if res.diverged:
            continue
        taus = np.array(res.trace.taus)
        if np.all(taus > theta.tau_m + margin) and np.all(taus < theta.tau_M - margin):
            return theta
    raise RuntimeError("no interior policy found")
