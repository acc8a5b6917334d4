"""The MNIST pipeline of the acceptance suite, rehearsed on synthetic IDX files."""

import numpy as np
from helpers import run_pipeline

from lbfgs_pi.tasks import write_idx


def _fake_mnist(directory, prefix, count, seed):
    gen = np.random.default_rng(seed)
    images = gen.integers(0, 256, (count, 28, 28), dtype=np.uint8)
    labels = gen.integers(0, 10, count, dtype=np.uint8)
    write_idx(directory / f"{prefix}-images-idx3-ubyte.gz", images)
    write_idx(directory / f"{prefix}-labels-idx1-ubyte.gz", labels)
    return directory / f"{prefix}-images-idx3-ubyte.gz", directory / f"{prefix}-labels-idx1-ubyte.gz"


def test_pipeline_on_synthetic_idx(tmp_path):
    train = _fake_mnist(tmp_path, "train", 60 * 20, 0)
    test = _fake_mnist(tmp_path, "t10k", 10 * 20, 1)
    records = run_pipeline(train, test, tmp_path / "report", batch_size=20)
    assert {r.optimizer for r in records} == {"lbfgs_pi", "lbfgs_baseline", "lbfgs_btls", "adam", "rmsprop"}
    assert (tmp_path / "report" / "summary.json").exists()
