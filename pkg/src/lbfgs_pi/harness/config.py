"""JSON experiment configuration.

Example::

    {
      "seed": 0,
      "tasks": {"source": "synthetic", "family": "logistic", "n": 50, "count": 20},
      "train": {"K": 50, "T": 8, "epochs": 50, "n_h": 6},
      "optimizers": [
        {"kind": "lbfgs_pi", "theta": "out/theta.json"},
        {"kind": "lbfgs_baseline"},
        {"kind": "lbfgs_btls", "c1": 0.25, "c2": 0.5, "t_init": 1.0},
        {"kind": "adam", "lr": 0.03},
        {"kind": "rmsprop", "lr": 0.01}
      ],
      "stop": {"K_max": 800, "grad_eps": 1e-8},
      "eps_grid": [1e-3, 1e-4, 1e-5],
      "warmup": 3,
      "clock": "seconds"
    }

``tasks.source`` is one of ``synthetic`` (keys ``family``, ``n``, ``count``,
``x0_scale``, ``l2``, ``samples_per_dim``, ``feature_decades``), ``random_mlp``
(``count``, ``n_samples``, ``p``, ``hidden``) or ``idx`` (``images``, ``labels``,
``batch_size``, ``n_batches``, ``inits_per_batch``, ``hidden``, ``side``,
``x0_scale``). Separate ``train_tasks`` / ``test_tasks`` blocks override
``tasks`` for the ``train`` and ``run`` commands.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..numcore import UsageError
from ..policy import read_params
from ..steppers import BtlsConfig
from ..tasks import load_idx, make_random_mlp_family, make_synthetic_family, make_task_set
from ..trainer import TrainConfig
from .runner import OptimizerSpec, StopCriteria


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    cfg.setdefault("_base", str(Path(path).resolve().parent))
    return cfg


def _path(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def build_task_set(cfg: dict, block: dict, seed: int):
    src = block.get("source", "synthetic")
    if src == "synthetic":
        fam = block.get("family", "logistic")
        return make_synthetic_family(
            fam, int(block.get("n", 50)), int(block.get("count", 20)), seed,
            x0_scale=float(block.get("x0_scale", 1.0)),
            l2=float(block.get("l2", 1e-3)),
            samples_per_dim=int(block.get("samples_per_dim", 4)),
            feature_decades=float(block.get("feature_decades", 0.0)),
        )
    if src == "random_mlp":
        return make_random_mlp_family(
            int(block.get("count", 5)), seed, n_samples=int(block.get("n_samples", 32)),
            p=int(block.get("p", 16)), hidden=tuple(block.get("hidden", (8,))),
            x0_scale=float(block.get("x0_scale", 0.1)),
        )
    if src == "idx":
        ds = load_idx(_path(cfg, block["images"]), _path(cfg, block["labels"]))
        side = block.get("side", 8)
        return make_task_set(
            ds, int(block.get("batch_size", 1000)), int(block.get("n_batches", 10)),
            int(block.get("inits_per_batch", 1)), seed, hidden=tuple(block.get("hidden", (20,))),
            side=None if side is None else int(side), x0_scale=float(block.get("x0_scale", 0.1)),
        )
    raise UsageError(f"unknown task source {src!r}")


def task_block(cfg: dict, which: str) -> dict:
    block = cfg.get(f"{which}_tasks", cfg.get("tasks"))
    if block is None:
        raise UsageError(f"config has neither '{which}_tasks' nor 'tasks'")
    return block


def train_config(cfg: dict, seed: int) -> TrainConfig:
    t = cfg.get("train", {})
    return TrainConfig(
        K=int(t.get("K", 50)), T=int(t.get("T", 8)), epochs=int(t.get("epochs", 50)),
        w=t.get("w"), resample_eps=float(t.get("resample_eps", 1e-10)), seed=seed,
        m=int(t.get("m", 5)),
    )


def optimizer_specs(cfg: dict, theta_override=None) -> list[OptimizerSpec]:
    specs = []
    for o in cfg.get("optimizers", [{"kind": k} for k in
                                     ("lbfgs_pi", "lbfgs_baseline", "lbfgs_btls", "adam", "rmsprop")]):
        kind = o["kind"]
        theta = None
        if kind == "lbfgs_pi":
            src = theta_override or o.get("theta")
            if src is None:
                raise UsageError("lbfgs_pi needs a 'theta' file (or --theta)")
            theta = read_params(_path(cfg, src) if theta_override is None else src)
        specs.append(OptimizerSpec(
            kind,
            theta=theta,
            btls=BtlsConfig(float(o.get("c1", 0.25)), float(o.get("c2", 0.5)),
                            float(o.get("t_init", 1.0)), int(o.get("max_backtracks", 50))),
            lr=o.get("lr"),
            m=int(o.get("m", 5)),
            name=o.get("name"),
        ))
    return specs


def stop_criteria(cfg: dict) -> StopCriteria:
    s = cfg.get("stop", {})
    return StopCriteria(int(s.get("K_max", 800)), float(s.get("grad_eps", 1e-8)))
