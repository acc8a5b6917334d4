"""Inner objective families with analytic value and gradient.

Three kinds are provided: convex quadratics, L2-regularized logistic
regression, and full-batch MLP classifiers with sigmoid hidden layers and a
softmax cross-entropy output.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import NonFiniteError, Rng, UsageError, as_vector

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
N_CLASSES = 10


class IdxFormatError(ValueError):
    pass


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class QuadraticPayload:
    A: np.ndarray
    b: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = as_vector(self.b)
        if self.A.shape != (self.b.size, self.b.size):
            raise UsageError("A must be n x n with n = len(b)")
        if np.max(np.abs(self.A - self.A.T), initial=0.0) > 1e-12:
            raise UsageError("A must be symmetric")

    @property
    def n(self):
        return self.b.size

    def value(self, x):
        return 0.5 * float(x @ (self.A @ x)) + float(self.b @ x) + self.offset

    def value_and_grad(self, x):
        Ax = self.A @ x
        return 0.5 * float(x @ Ax) + float(self.b @ x) + self.offset, Ax + self.b


@dataclass
class LogisticPayload:
    features: np.ndarray
    labels: np.ndarray
    l2: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise UsageError("features must be N x n and labels length N")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise UsageError("labels must be 0 or 1")
        if self.l2 < 0:
            raise UsageError("l2 must be nonnegative")

    @property
    def n(self):
        return self.features.shape[1]

    def value(self, x):
        z = self.features @ x
        return float(np.mean(np.logaddexp(0.0, z) - self.labels * z)) + 0.5 * self.l2 * float(x @ x)

    def value_and_grad(self, x):
        z = self.features @ x
        f = float(np.mean(np.logaddexp(0.0, z) - self.labels * z)) + 0.5 * self.l2 * float(x @ x)
        g = self.features.T @ (sigmoid(z) - self.labels) / z.size + self.l2 * x
        return f, g


def mlp_param_count(widths) -> int:
    return sum((a + 1) * b for a, b in zip(widths[:-1], widths[1:]))


@dataclass
class MlpPayload:
    """Full-batch classifier; parameters are packed layer by layer as ``W`` (out x in) then ``b``."""

    images: np.ndarray
    labels: np.ndarray
    widths: tuple

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.widths = tuple(int(w) for w in self.widths)
        if self.images.ndim != 2 or self.images.shape[1] != self.widths[0]:
            raise UsageError("images must be N x p with p equal to the input width")
        if self.labels.shape != (self.images.shape[0],):
            raise UsageError("one label per image required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.widths[-1]):
            raise UsageError("label out of range")
        self._onehot = np.eye(self.widths[-1])[self.labels]

    @property
    def n(self):
        return mlp_param_count(self.widths)

    def unpack(self, x):
        layers = []
        i = 0
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            W = x[i : i + a * b].reshape(b, a)
            i += a * b
            layers.append((W, x[i : i + b]))
            i += b
        return layers

    def _forward(self, x):
        acts = [self.images]
        layers = self.unpack(x)
        h = self.images
        for W, b in layers[:-1]:
            h = sigmoid(h @ W.T + b)
            acts.append(h)
        W, b = layers[-1]
        logits = h @ W.T + b
        logits = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1, keepdims=True))
        logp = logits - logz
        f = -float(np.mean(np.sum(self._onehot * logp, axis=1)))
        return f, layers, acts, logp

    def value(self, x):
        return self._forward(x)[0]

    def value_and_grad(self, x):
        f, layers, acts, logp = self._forward(x)
        N = self.images.shape[0]
        delta = (np.exp(logp) - self._onehot) / N
        grads = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            h = acts[li]
            grads.append((delta.T @ h, delta.sum(axis=0)))
            if li:
                delta = (delta @ W) * h * (1.0 - h)
        g = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])
        return f, g


@dataclass
class Task:
    kind: str
    payload: object
    id: str = ""

    @property
    def dimension(self) -> int:
        return self.payload.n

    def _check(self, x):
        x = as_vector(x)
        if x.size != self.dimension:
            raise UsageError(f"task {self.id}: expected x of length {self.dimension}, got {x.size}")
        return x

    def value(self, x) -> float:
        f = self.payload.value(self._check(x))
        if not np.isfinite(f):
            raise NonFiniteError(f"task {self.id}: non-finite objective")
        return f

    def value_and_grad(self, x):
        f, g = self.payload.value_and_grad(self._check(x))
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NonFiniteError(f"task {self.id}: non-finite objective or gradient")
        return f, g


def task_eval(task: Task, x):
    return task.value_and_grad(x)


def quadratic_task(A, b, offset=0.0, id="quadratic") -> Task:
    return Task("quadratic", QuadraticPayload(A, b, offset), id)


def logistic_task(features, labels, l2=0.0, id="logistic") -> Task:
    return Task("logistic", LogisticPayload(features, labels, l2), id)


def mlp_task(images, labels, hidden=(20,), n_classes=N_CLASSES, id="mlp") -> Task:
    images = np.asarray(images, dtype=np.float64)
    widths = (images.shape[1], *hidden, n_classes)
    return Task("mlp", MlpPayload(images, labels, widths), id)


# IDX ingestion ------------------------------------------------------------------


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (1-D label or 3-D image layout)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGES_MAGIC:
        ndim = 3
    elif magic == IDX_LABELS_MAGIC:
        ndim = 1
    else:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < count:
        raise IdxFormatError(f"{path}: truncated payload, expected {count} bytes, got {len(payload)}")
    if len(payload) > count:
        raise IdxFormatError(f"{path}: {len(payload) - count} trailing bytes after payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX; used for fixtures and test data."""
    a = np.asarray(array, dtype=np.uint8)
    if a.ndim == 3:
        magic = IDX_IMAGES_MAGIC
    elif a.ndim == 1:
        magic = IDX_LABELS_MAGIC
    else:
        raise UsageError("only 1-D label and 3-D image arrays are supported")
    data = struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes()
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(data)


@dataclass
class Dataset:
    images: np.ndarray  # N x rows x cols, raw bytes
    labels: np.ndarray
    source: str = ""

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise IdxFormatError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.labels.shape[0]

    def pixels(self, side: int | None = None) -> np.ndarray:
        """Flattened pixels scaled to [0, 1], optionally block-averaged to ``side x side``."""
        imgs = self.images.astype(np.float64) / 255.0
        if side is not None and side != imgs.shape[1]:
            imgs = downsample(imgs, side)
        return imgs.reshape(imgs.shape[0], -1)


def downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Average-pool ``N x r x c`` images onto a ``side x side`` grid of near-equal bins."""
    _, r, c = images.shape
    if side > min(r, c):
        raise UsageError("cannot upsample")
    rows = np.linspace(0, r, side + 1).round().astype(int)
    cols = np.linspace(0, c, side + 1).round().astype(int)
    out = np.add.reduceat(np.add.reduceat(images, rows[:-1], axis=1), cols[:-1], axis=2)
    return out / np.outer(np.diff(rows), np.diff(cols))


def load_idx(images_path, labels_path) -> Dataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected an image file")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a label file")
    return Dataset(images, labels.astype(np.int64), source=str(images_path))


# task-set construction ------------------------------------------------------------


def make_task_set(dataset: Dataset, batch_size: int, n_batches: int, inits_per_batch: int,
                  seed: int, hidden=(20,), side: int | None = 8, x0_scale: float = 0.1,
                  prefix: str = "mnist"):
    """Random disjoint batches, one MLP task per batch, ``inits_per_batch`` starts each."""
    if batch_size * n_batches > len(dataset):
        raise UsageError(
            f"need {batch_size * n_batches} samples, dataset has {len(dataset)}"
        )
    rng = Rng(seed)
    order = rng.permutation(len(dataset))
    pixels = dataset.pixels(side)
    out = []
    for bi in range(n_batches):
        idx = order[bi * batch_size : (bi + 1) * batch_size]
        task = mlp_task(pixels[idx], dataset.labels[idx], hidden, id=f"{prefix}-{seed}-b{bi}")
        for j in range(inits_per_batch):
            x0 = rng.randn(task.dimension, x0_scale)
            out.append((task, x0))
    return out


def make_synthetic_family(kind: str, n: int, count: int, seed: int, x0_scale: float = 1.0,
                          f_min: float = 1.0, l2: float = 1e-3, samples_per_dim: int = 4,
                          feature_decades: float = 0.0):
    """Seeded random quadratics or logistic-regression instances with one start each.

    Quadratics are ``A = M^T M + 1e-3 I`` with ``M`` a scaled Gaussian matrix of
    ``samples_per_dim * n`` rows, and an offset placing the minimum value at
    ``f_min`` (positive, so log-ratio metrics stay defined). One row per dimension
    makes ``A`` nearly singular; more rows tighten its spectrum. Logistic feature
    columns are scaled by ``10**u`` with ``u`` uniform in
    ``[-feature_decades, feature_decades]``; spreading the scales makes the
    Hessian ill-conditioned and the problem slower to solve.
    """
    if n < 1:
        raise UsageError("n must be at least 1")
    rng = Rng(seed)
    gen = rng.generator
    out = []
    for i in range(count):
        tid = f"{kind}-{seed}-{i}"
        if kind == "quadratic":
            rows = samples_per_dim * n
            M = gen.standard_normal((rows, n)) / np.sqrt(rows)
            A = M.T @ M + 1e-3 * np.eye(n)
            A = 0.5 * (A + A.T)
            b = gen.standard_normal(n)
            offset = 0.5 * float(b @ np.linalg.solve(A, b)) + f_min
            task = quadratic_task(A, b, offset, id=tid)
        elif kind == "logistic":
            N = samples_per_dim * n
            F = gen.standard_normal((N, n))
            if feature_decades > 0:
                F *= 10.0 ** gen.uniform(-feature_decades, feature_decades, n)
            w_true = 3.0 * gen.standard_normal(n) / np.sqrt(n)
            labels = (gen.random(N) < sigmoid(F @ w_true)).astype(np.float64)
            task = logistic_task(F, labels, l2, id=tid)
        else:
            raise UsageError(f"unknown synthetic kind {kind!r}")
        out.append((task, rng.randn(n, x0_scale)))
    return out


def make_random_mlp_family(count: int, seed: int, n_samples: int = 32, p: int = 16,
                           hidden=(8,), n_classes: int = N_CLASSES, x0_scale: float = 0.1):
    """Small MLP tasks on random pixel data, for property tests and smoke runs."""
    rng = Rng(seed)
    gen = rng.generator
    out = []
    for i in range(count):
        images = gen.random((n_samples, p))
        labels = gen.integers(0, n_classes, n_samples)
        task = mlp_task(images, labels, hidden, n_classes, id=f"mlp-{seed}-{i}")
        out.append((task, rng.randn(task.dimension, x0_scale)))
    return out
