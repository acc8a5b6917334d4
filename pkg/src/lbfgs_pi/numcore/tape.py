"""Minimal reverse-mode differentiation tape.

Only the handful of primitives needed to unroll L-BFGS with a step-size
policy are supported. Operands are either :class:`Var` handles recorded on
the same tape or plain floats/arrays, which are treated as constants.

Nodes are appended in evaluation order, so a single reverse sweep visits
every node after all of its consumers.
"""

from __future__ import annotations

import numpy as np

from .vector import NonFiniteError, UsageError


class Var:
    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.values[self.idx]

    def __repr__(self):
        return f"Var(#{self.idx}, {self.value!r})"


def value_of(a):
    if isinstance(a, Var):
        return a.value
    if isinstance(a, (list, tuple)):
        return np.asarray(a, dtype=np.float64)
    return a


class Adjoints(dict):
    """Mapping node index -> adjoint, with zero fill for untouched nodes."""

    def __init__(self, tape: "Tape", data):
        super().__init__(data)
        self._tape = tape

    def of(self, var: Var):
        got = self.get(var.idx)
        if got is None:
            return np.zeros_like(np.asarray(var.value, dtype=np.float64)) if np.ndim(var.value) else 0.0
        return got


class Tape:
    """Append-only record of primitive operations.

    Each node stores its value, the indices of the :class:`Var` parents and a
    closure mapping the node's adjoint to one contribution per parent.
    """

    def __init__(self, check_finite: bool = True):
        self.values: list = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list = []
        self.kinds: list[str] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.values)

    def _push(self, kind, value, parents, vjp) -> Var:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite result in tape op '{kind}'")
        self.values.append(value)
        self.parents.append(parents)
        self.vjps.append(vjp)
        self.kinds.append(kind)
        return Var(self, len(self.values) - 1)

    def _own(self, a) -> bool:
        if isinstance(a, Var):
            if a.tape is not self:
                raise UsageError("operand recorded on a different tape")
            return True
        return False

    # leaves -----------------------------------------------------------------

    def leaf(self, value) -> Var:
        if np.ndim(value):
            value = np.array(value, dtype=np.float64)
        else:
            value = float(value)
        return self._push("leaf", value, (), None)

    # arithmetic -------------------------------------------------------------

    def add(self, a, b) -> Var:
        va, vb = value_of(a), value_of(b)
        if np.shape(va) != np.shape(vb):
            raise UsageError("add: shape mismatch")
        ps = tuple(x.idx for x in (a, b) if self._own(x))
        n = len(ps)
        return self._push("add", va + vb, ps, lambda g: (g,) * n)

    def sub(self, a, b) -> Var:
        va, vb = value_of(a), value_of(b)
        if np.shape(va) != np.shape(vb):
            raise UsageError("sub: shape mismatch")
        oa, ob = self._own(a), self._own(b)
        ps = tuple(x.idx for x, o in ((a, oa), (b, ob)) if o)
        if oa and ob:
            vjp = lambda g: (g, -g)
        elif oa:
            vjp = lambda g: (g,)
        else:
            vjp = lambda g: (-g,)
        return self._push("sub", va - vb, ps, vjp)

    def mul(self, a, b) -> Var:
        """Scalar times scalar, or scalar ``a`` times vector ``b``."""
        va, vb = value_of(a), value_of(b)
        if np.ndim(va) != 0:
            raise UsageError("mul: first operand must be a scalar")
        oa, ob = self._own(a), self._own(b)
        ps = []
        if oa:
            ps.append(a.idx)
        if ob:
            ps.append(b.idx)
        vector = np.ndim(vb) != 0

        def vjp(g):
            out = []
            if oa:
                out.append(float(g @ vb) if vector else g * vb)
            if ob:
                out.append(va * g)
            return out

        return self._push("mul", va * vb, tuple(ps), vjp)

    def div(self, a, b) -> Var:
        """Scalar quotient ``a / b``."""
        va, vb = value_of(a), value_of(b)
        if np.ndim(va) or np.ndim(vb):
            raise UsageError("div: scalar operands only")
        oa, ob = self._own(a), self._own(b)
        q = va / vb
        ps = []
        if oa:
            ps.append(a.idx)
        if ob:
            ps.append(b.idx)

        def vjp(g):
            out = []
            if oa:
                out.append(g / vb)
            if ob:
                out.append(-g * q / vb)
            return out

        return self._push("div", q, tuple(ps), vjp)

    def dot(self, a, b) -> Var:
        va, vb = value_of(a), value_of(b)
        if np.shape(va) != np.shape(vb) or np.ndim(va) != 1:
            raise UsageError("dot: length mismatch")
        oa, ob = self._own(a), self._own(b)
        ps = []
        if oa:
            ps.append(a.idx)
        if ob:
            ps.append(b.idx)
        if oa and ob:
            vjp = lambda g: (g * vb, g * va)
        elif oa:
            vjp = lambda g: (g * vb,)
        else:
            vjp = lambda g: (g * va,)
        return self._push("dot", float(va @ vb), tuple(ps), vjp)

    def norm(self, a) -> Var:
        va = value_of(a)
        r = float(np.linalg.norm(va))
        ps = (a.idx,) if self._own(a) else ()
        # subgradient 0 at the origin
        return self._push("norm", r, ps, lambda g: (g * va / r if r > 0 else 0.0 * va,))

    def abs(self, a) -> Var:
        va = value_of(a)
        ps = (a.idx,) if self._own(a) else ()
        return self._push("abs", np.abs(va), ps, lambda g: (g * np.sign(va),))

    def log(self, a) -> Var:
        va = value_of(a)
        ps = (a.idx,) if self._own(a) else ()
        return self._push("log", np.log(va), ps, lambda g: (g / va,))

    def exp(self, a) -> Var:
        va = value_of(a)
        e = np.exp(va)
        ps = (a.idx,) if self._own(a) else ()
        return self._push("exp", e, ps, lambda g: (g * e,))

    def maximum(self, a, c: float) -> Var:
        """Elementwise ``max(a, c)`` against a constant; slope 0 at or below ``c``."""
        va = value_of(a)
        ps = (a.idx,) if self._own(a) else ()
        mask = va > c
        return self._push("max", np.where(mask, va, c) if np.ndim(va) else max(va, c), ps,
                          lambda g: (g * mask,))

    def minimum(self, a, c: float) -> Var:
        va = value_of(a)
        ps = (a.idx,) if self._own(a) else ()
        mask = va < c
        return self._push("min", np.where(mask, va, c) if np.ndim(va) else min(va, c), ps,
                          lambda g: (g * mask,))

    def clip(self, a, lo: float, hi: float) -> Var:
        """Clip to ``[lo, hi]``; slope 1 strictly inside, 0 at or beyond the bounds."""
        if not lo < hi:
            raise UsageError("clip: need lo < hi")
        va = value_of(a)
        ps = (a.idx,) if self._own(a) else ()
        inside = (va > lo) & (va < hi)
        out = np.clip(va, lo, hi) if np.ndim(va) else min(hi, max(lo, va))
        return self._push("clip", out, ps, lambda g: (g * inside,))

    def affine(self, W, x, b) -> Var:
        """Matrix-vector affine map ``W @ x + b``."""
        vW, vx, vb = value_of(W), value_of(x), value_of(b)
        if np.ndim(vW) != 2 or vW.shape[1] != np.shape(vx)[0] or vW.shape[0] != np.shape(vb)[0]:
            raise UsageError("affine: shape mismatch")
        own = [self._own(W), self._own(x), self._own(b)]
        ps = tuple(v.idx for v, o in zip((W, x, b), own) if o)

        def vjp(g):
            out = []
            if own[0]:
                out.append(np.outer(g, vx))
            if own[1]:
                out.append(vW.T @ g)
            if own[2]:
                out.append(g)
            return out

        return self._push("affine", vW @ vx + vb, ps, vjp)

    def stack(self, items) -> Var:
        """Gather scalars into a vector."""
        vals = np.array([float(value_of(a)) for a in items])
        slots = [(i, a.idx) for i, a in enumerate(items) if self._own(a)]
        ps = tuple(idx for _, idx in slots)
        pos = [i for i, _ in slots]
        return self._push("stack", vals, ps, lambda g: [g[i] for i in pos])

    def external(self, x, value: float, grad) -> Var:
        """Scalar produced outside the tape, with a supplied gradient w.r.t. ``x``.

        The node's value is ``value``; in the backward sweep it behaves like
        ``grad . x``, i.e. ``grad`` is a constant and is never differentiated.
        """
        grad = np.asarray(grad, dtype=np.float64)
        if np.shape(value_of(x)) != grad.shape:
            raise UsageError("external: gradient shape mismatch")
        ps = (x.idx,) if self._own(x) else ()
        return self._push("external", float(value), ps, lambda g: (g * grad,))

    # reverse sweep ----------------------------------------------------------

    def backward(self, root: Var) -> Adjoints:
        return tape_backward(self, root)


def tape_backward(tape: Tape, root: Var) -> Adjoints:
    """Adjoints d(root)/d(node) for every node that influences ``root``."""
    if root.tape is not tape:
        raise UsageError("root belongs to another tape")
    if np.ndim(root.value) != 0:
        raise UsageError("backward root must hold a scalar")
    adj: list = [None] * (root.idx + 1)
    adj[root.idx] = 1.0
    parents, vjps = tape.parents, tape.vjps
    for i in range(root.idx, -1, -1):
        g = adj[i]
        if g is None:
            continue
        ps = parents[i]
        if not ps:
            continue
        for p, c in zip(ps, vjps[i](g)):
            prev = adj[p]
            adj[p] = c if prev is None else prev + c
    return Adjoints(tape, {i: a for i, a in enumerate(adj) if a is not None})
