"""Limited-memory BFGS correction history and the two-loop recursion.

Pairs with non-positive curvature ``s.y <= 0`` are never stored, which is
the usual safeguard for non-convex objectives: they simply drop out of both
loops and out of the initial scaling.

The ``*_tape`` variants record the same computation on a
:class:`~lbfgs_pi.numcore.Tape`, so that steps ``s`` produced by a learned
policy can carry gradients into later directions. Curvature vectors ``y``
and gradients are always constants there.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .numcore import Tape, UsageError, Var, as_vector, value_of

DEFAULT_MEMORY = 5


@dataclass
class Pair:
    s: object  # ndarray, or Var when recorded on a tape
    y: np.ndarray
    rho: object
    sy: object
    yy: float


class LbfgsHistory:
    """Bounded oldest-first queue of accepted ``(s, y, rho)`` pairs."""

    def __init__(self, m: int = DEFAULT_MEMORY):
        if m < 1:
            raise UsageError("memory m must be at least 1")
        self.m = m
        self.pairs: deque[Pair] = deque(maxlen=m)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def clear(self):
        self.pairs.clear()

    def copy(self) -> "LbfgsHistory":
        h = LbfgsHistory(self.m)
        h.pairs.extend(self.pairs)
        return h

    def detached(self) -> "LbfgsHistory":
        """Copy with every tape-recorded quantity replaced by its value."""
        h = LbfgsHistory(self.m)
        for p in self.pairs:
            h.pairs.append(
                Pair(
                    np.array(value_of(p.s)),
                    p.y,
                    float(value_of(p.rho)),
                    float(value_of(p.sy)),
                    p.yy,
                )
            )
        return h

    def push_pair(self, s, y) -> bool:
        s = as_vector(s)
        y = as_vector(y)
        if s.shape != y.shape:
            raise UsageError("s and y must have the same length")
        sy = float(s @ y)
        if not sy > 0:
            return False
        self.pairs.append(Pair(s.copy(), y.copy(), 1.0 / sy, sy, float(y @ y)))
        return True

    def gamma(self) -> float:
        if not self.pairs:
            return 1.0
        p = self.pairs[-1]
        return abs(float(value_of(p.sy))) / p.yy

    def two_loop(self, g) -> np.ndarray:
        """Return ``d = -H g`` for the implicit inverse-Hessian approximation."""
        q = np.array(as_vector(g), dtype=np.float64)
        pairs = self.pairs
        if pairs and q.shape != np.shape(value_of(pairs[0].s)):
            raise UsageError("gradient length does not match history")
        alphas = []
        for p in reversed(pairs):
            s = value_of(p.s)
            a = float(value_of(p.rho)) * float(s @ q)
            q -= a * p.y
            alphas.append(a)
        r = self.gamma() * q
        for p, a in zip(pairs, reversed(alphas)):
            s = value_of(p.s)
            b = float(value_of(p.rho)) * float(p.y @ r)
            r += (a - b) * s
        return -r


def push_pair(h: LbfgsHistory, s, y) -> bool:
    return h.push_pair(s, y)


def gamma(h: LbfgsHistory) -> float:
    return h.gamma()


def two_loop(h: LbfgsHistory, g) -> np.ndarray:
    return h.two_loop(g)


# tape-recorded variants -------------------------------------------------------


def push_pair_tape(tape: Tape, h: LbfgsHistory, s: Var, y: np.ndarray) -> bool:
    """Store ``(s, y)`` with ``s`` living on ``tape``; ``y`` is a constant."""
    y = as_vector(y)
    if np.shape(value_of(s)) != y.shape:
        raise UsageError("s and y must have the same length")
    sy = tape.dot(s, y)
    if not sy.value > 0:
        return False
    rho = tape.div(1.0, sy)
    h.pairs.append(Pair(s, y.copy(), rho, sy, float(y @ y)))
    return True


def two_loop_tape(tape: Tape, h: LbfgsHistory, g: np.ndarray):
    """Record the two-loop recursion; returns ``d`` as a tape value.

    With an empty history nothing is recorded and ``-g`` is returned as a
    constant array.
    """
    g = as_vector(g)
    if not h.pairs:
        return -g
    q = g
    alphas = []
    for p in reversed(h.pairs):
        a = tape.mul(p.rho, tape.dot(p.s, q))
        q = tape.sub(q, tape.mul(a, p.y))
        alphas.append(a)
    newest = h.pairs[-1]
    gam = tape.div(tape.abs(newest.sy), newest.yy)
    r = tape.mul(gam, q)
    for p, a in zip(h.pairs, reversed(alphas)):
        b = tape.mul(p.rho, tape.dot(p.y, r))
        r = tape.add(r, tape.mul(tape.sub(a, b), p.s))
    return tape.mul(-1.0, r)
