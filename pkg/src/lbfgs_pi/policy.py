"""Learned step-size policy for L-BFGS.

The policy only sees the 16 log-Gram features of ``(d, g, s_prev, y_prev)``,
maps them through two parallel affine layers ``u1`` and ``u2``, takes the
clipped scalar projection of ``u1`` on ``u2`` as a log-step ``tau`` and
returns ``t = exp(tau)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numcore import NonFiniteError, Rng, Tape, UsageError, Var, as_vector

N_FEATURES = 16
FEATURE_EPS = 1e-8
NORM_EPS = 1e-12
DEFAULT_HIDDEN = 6
DEFAULT_TAU_MIN = -3.0
DEFAULT_TAU_MAX = 0.0
FORMAT_VERSION = 1

# (row, col) of the three superdiagonal Gram entries whose sign is flipped
_SUPERDIAG = ((0, 1), (1, 2), (2, 3))


class PolicyFormatError(ValueError):
    pass


@dataclass
class PolicyParams:
    W01: np.ndarray
    b01: np.ndarray
    W02: np.ndarray
    b02: np.ndarray
    tau_m: float = DEFAULT_TAU_MIN
    tau_M: float = DEFAULT_TAU_MAX

    def __post_init__(self):
        self.W01 = np.array(self.W01, dtype=np.float64)
        self.b01 = np.array(self.b01, dtype=np.float64)
        self.W02 = np.array(self.W02, dtype=np.float64)
        self.b02 = np.array(self.b02, dtype=np.float64)
        self.tau_m = float(self.tau_m)
        self.tau_M = float(self.tau_M)
        nh = self.b01.shape[0] if self.b01.ndim == 1 else -1
        for name, arr, shape in (
            ("W01", self.W01, (nh, N_FEATURES)),
            ("b01", self.b01, (nh,)),
            ("W02", self.W02, (nh, N_FEATURES)),
            ("b02", self.b02, (nh,)),
        ):
            if arr.shape != shape:
                raise UsageError(f"{name} has shape {arr.shape}, expected {shape}")
        if not self.tau_m < self.tau_M:
            raise UsageError("tau_m must be smaller than tau_M")
        if not all(np.all(np.isfinite(a)) for a in (self.W01, self.b01, self.W02, self.b02)):
            raise UsageError("policy parameters must be finite")

    @property
    def n_h(self) -> int:
        return self.b01.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.n_h * (N_FEATURES + 1)

    def flat(self) -> np.ndarray:
        """Trainable entries in the order W01, b01, W02, b02 (row-major)."""
        return np.concatenate([self.W01.ravel(), self.b01, self.W02.ravel(), self.b02])

    def with_flat(self, v) -> "PolicyParams":
        v = as_vector(v, self.size)
        nh = self.n_h
        k = nh * N_FEATURES
        return PolicyParams(
            v[:k].reshape(nh, N_FEATURES),
            v[k : k + nh],
            v[k + nh : 2 * k + nh].reshape(nh, N_FEATURES),
            v[2 * k + nh :],
            self.tau_m,
            self.tau_M,
        )

    def copy(self) -> "PolicyParams":
        return self.with_flat(self.flat())


@dataclass(frozen=True)
class StepDecision:
    tau: float
    t: float


def init_params(rng: Rng, n_h: int = DEFAULT_HIDDEN, scale: float = 0.1,
                tau_m: float = DEFAULT_TAU_MIN, tau_M: float = DEFAULT_TAU_MAX) -> PolicyParams:
    """Small random weights, zero biases, and ``b02 = e1`` so ``u2`` starts non-degenerate."""
    gen = rng.generator
    b02 = np.zeros(n_h)
    b02[0] = 1.0
    return PolicyParams(
        scale * gen.standard_normal((n_h, N_FEATURES)),
        np.zeros(n_h),
        scale * gen.standard_normal((n_h, N_FEATURES)),
        b02,
        tau_m,
        tau_M,
    )


def make_cosphi_params(tau_m: float = DEFAULT_TAU_MIN) -> PolicyParams:
    """Parameters whose step equals ``cos(phi) = -d.g / (|d| |g|)`` when unclipped."""
    W01 = np.zeros((1, N_FEATURES))
    W01[0, 0 * 4 + 1] = 1.0  # ln(-d.g)
    W01[0, 0 * 4 + 0] = -0.5  # ln(d.d)
    W01[0, 1 * 4 + 1] = -0.5  # ln(g.g)
    return PolicyParams(W01, np.zeros(1), np.zeros((1, N_FEATURES)), np.ones(1), tau_m, 0.0)


# forward evaluation -----------------------------------------------------------


def _gram(vectors) -> np.ndarray:
    V = np.vstack(vectors)
    X = V @ V.T
    for i, j in _SUPERDIAG:
        X[i, j] = -X[i, j]
    return X


def dotln(d, g, s_prev, y_prev, eps: float = FEATURE_EPS) -> np.ndarray:
    vs = [as_vector(v) for v in (d, g, s_prev, y_prev)]
    if len({v.shape for v in vs}) != 1:
        raise UsageError("dotln: all four vectors must have the same length")
    if not eps > 0:
        raise UsageError("dotln: eps must be positive")
    return np.log(np.maximum(_gram(vs), eps)).ravel()


def project_clip(u1, u2, tau_m: float, tau_M: float) -> float:
    if not tau_m < tau_M:
        raise UsageError("project_clip: need tau_m < tau_M")
    u1 = as_vector(u1)
    u2 = as_vector(u2)
    p = float(u2 @ u1) / (float(u2 @ u2) + NORM_EPS)
    return min(tau_M, max(tau_m, p))


def policy_step(theta: PolicyParams, d, g, s_prev, y_prev) -> StepDecision:
    u0 = dotln(d, g, s_prev, y_prev)
    u1 = theta.W01 @ u0 + theta.b01
    u2 = theta.W02 @ u0 + theta.b02
    if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))):
        raise NonFiniteError("policy produced a non-finite intermediate")
    tau = project_clip(u1, u2, theta.tau_m, theta.tau_M)
    return StepDecision(tau, float(np.exp(tau)))


# tape-recorded forward --------------------------------------------------------


@dataclass
class ParamVars:
    W01: Var
    b01: Var
    W02: Var
    b02: Var
    tau_m: float
    tau_M: float

    @classmethod
    def record(cls, tape: Tape, theta: PolicyParams) -> "ParamVars":
        return cls(
            tape.leaf(theta.W01),
            tape.leaf(theta.b01),
            tape.leaf(theta.W02),
            tape.leaf(theta.b02),
            theta.tau_m,
            theta.tau_M,
        )

    def flat_grad(self, adj) -> np.ndarray:
        return np.concatenate(
            [np.ravel(adj.of(self.W01)), adj.of(self.b01), np.ravel(adj.of(self.W02)), adj.of(self.b02)]
        )


def dotln_tape(tape: Tape, d, g, s_prev, y_prev, eps: float = FEATURE_EPS) -> Var:
    vs = (d, g, s_prev, y_prev)
    X = [[None] * 4 for _ in range(4)]
    for i in range(4):
        for j in range(i, 4):
            X[i][j] = X[j][i] = tape.dot(vs[i], vs[j])
    for i, j in _SUPERDIAG:
        X[i][j] = tape.mul(-1.0, X[i][j])
    u0 = tape.stack([X[i][j] for i in range(4) for j in range(4)])
    return tape.log(tape.maximum(u0, eps))


def policy_step_tape(tape: Tape, pv: ParamVars, d, g, s_prev, y_prev):
    """Record the policy; returns ``(tau, t)`` as tape nodes."""
    u0 = dotln_tape(tape, d, g, s_prev, y_prev)
    u1 = tape.affine(pv.W01, u0, pv.b01)
    u2 = tape.affine(pv.W02, u0, pv.b02)
    p = tape.div(tape.dot(u2, u1), tape.add(tape.dot(u2, u2), NORM_EPS))
    tau = tape.clip(p, pv.tau_m, pv.tau_M)
    return tau, tape.exp(tau)


# serialization ----------------------------------------------------------------


def params_to_dict(theta: PolicyParams) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "n_h": theta.n_h,
        "tau_m": theta.tau_m,
        "tau_M": theta.tau_M,
        "W01": theta.W01.tolist(),
        "b01": theta.b01.tolist(),
        "W02": theta.W02.tolist(),
        "b02": theta.b02.tolist(),
    }


def save_params(theta: PolicyParams) -> bytes:
    # json emits shortest round-trip reprs, so floats survive bit-exactly
    return json.dumps(params_to_dict(theta), indent=1).encode()


def load_params(data) -> PolicyParams:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise PolicyFormatError(f"malformed policy document: {exc}") from exc
    if not isinstance(doc, dict):
        raise PolicyFormatError("policy document must be a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise PolicyFormatError(f"unsupported format_version {doc.get('format_version')!r}")
    missing = {"n_h", "tau_m", "tau_M", "W01", "b01", "W02", "b02"} - doc.keys()
    if missing:
        raise PolicyFormatError(f"missing fields: {sorted(missing)}")
    nh = doc["n_h"]
    if not isinstance(nh, int) or nh < 1:
        raise PolicyFormatError("n_h must be a positive integer")
    try:
        arrays = {k: np.array(doc[k], dtype=np.float64) for k in ("W01", "b01", "W02", "b02")}
    except (TypeError, ValueError) as exc:
        raise PolicyFormatError(f"bad numeric array: {exc}") from exc
    for k in ("W01", "W02"):
        if arrays[k].shape != (nh, N_FEATURES):
            raise PolicyFormatError(f"{k} shape {arrays[k].shape} does not match n_h={nh}")
    for k in ("b01", "b02"):
        if arrays[k].shape != (nh,):
            raise PolicyFormatError(f"{k} shape {arrays[k].shape} does not match n_h={nh}")
    try:
        return PolicyParams(tau_m=doc["tau_m"], tau_M=doc["tau_M"], **arrays)
    except UsageError as exc:
        raise PolicyFormatError(str(exc)) from exc


def read_params(path) -> PolicyParams:
    with open(path, "rb") as fh:
        return load_params(fh.read())


def write_params(theta: PolicyParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save_params(theta))
