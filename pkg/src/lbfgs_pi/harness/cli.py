"""Command-line entry point: ``lbfgs-pi {train,run,compare,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import checks
from ..numcore import NonFiniteError, Rng, UsageError
from ..policy import init_params, read_params, write_params
from ..tasks import make_random_mlp_family, make_synthetic_family
from ..trainer import train, warm_start_train
from . import config as C
from .metrics import match_records, win_tie_table
from .report import export_report, read_traces_csv, summarize
from .runner import run_many

log = logging.getLogger("lbfgs_pi")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lbfgs-pi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a step-size policy")
    t.add_argument("--warm-start", type=Path, help="policy file to continue from")

    r = sub.add_parser("run", parents=[common], help="run optimizers on the test task set")
    r.add_argument("--theta", type=Path, help="policy file for lbfgs_pi (overrides config)")

    c = sub.add_parser("compare", parents=[common], help="metrics report from traces")
    c.add_argument("--traces", type=Path, help="traces.csv (default: OUT/traces.csv)")
    c.add_argument("--reference", default="lbfgs_pi")

    sub.add_parser("gradcheck", parents=[common], help="run the oracle checks")
    return p


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if not 0 <= int(seed) < 2**64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    return int(seed)


def cmd_train(args, cfg) -> int:
    seed = _seed(args, cfg)
    tcfg = C.train_config(cfg, seed)
    tasks = C.build_task_set(cfg, C.task_block(cfg, "train"), seed)
    if args.warm_start:
        theta0 = read_params(args.warm_start)
    else:
        theta0 = init_params(Rng(seed).spawn(1), int(cfg.get("train", {}).get("n_h", 6)))

    def progress(epoch, tlog):
        losses = tlog.losses(epoch)
        log.info("epoch %d: mean loss %.6g over %d outer steps", epoch,
                 float(np.mean(losses)) if losses else float("nan"), len(losses))

    fit = warm_start_train if args.warm_start else train
    theta, tlog = fit(theta0, tasks, tcfg, progress)
    args.out.mkdir(parents=True, exist_ok=True)
    write_params(theta, args.out / "theta.json")
    tlog.write_jsonl(args.out / "train_log.jsonl")
    print(f"wrote {args.out / 'theta.json'} and {args.out / 'train_log.jsonl'}")
    return 0


def cmd_run(args, cfg) -> int:
    seed = _seed(args, cfg)
    tasks = C.build_task_set(cfg, C.task_block(cfg, "test"), seed + 1)
    specs = C.optimizer_specs(cfg, args.theta)
    stop = C.stop_criteria(cfg)
    jobs = []
    for spec in specs:
        for i, (task, x0) in enumerate(tasks):
            jobs.append((task, x0, spec, f"{task.id}#{i}"))
    records = run_many(jobs, stop, args.threads, int(cfg.get("warmup", 0)))
    eps_grid = cfg.get("eps_grid", [1e-3, 1e-4, 1e-5])
    ref = "lbfgs_pi" if any(s.name == "lbfgs_pi" for s in specs) else specs[0].name
    paths = export_report(records, args.out, eps_grid, ref, cfg.get("clock", "seconds"))
    print(f"wrote {paths['traces']} and {paths['summary']}")
    return 0


def cmd_compare(args, cfg) -> int:
    path = args.traces or args.out / "traces.csv"
    records = read_traces_csv(path)
    warmup = int(cfg.get("warmup", 0))
    seen: dict = {}
    for rec in records:
        c = seen.get(rec.optimizer, 0)
        rec.warmup = c < warmup
        seen[rec.optimizer] = c + 1
    eps_grid = cfg.get("eps_grid", [1e-3, 1e-4, 1e-5])
    clock = cfg.get("clock", "seconds")
    summary = summarize(records, eps_grid, args.reference, clock)
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "compare.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    table = win_tie_table(match_records(records, args.reference), eps_grid, clock)
    print(f"{'competitor':<16}{'eps':>10}{'W%':>8}{'T%':>8}")
    for row in table:
        print(f"{row['competitor']:<16}{row['eps']:>10.0e}{row['win']:>8.1f}{row['tie']:>8.1f}")
    for comp, vals in summary.get("index", {}).get("min", {}).items():
        v = [x for x in vals.values() if x is not None]
        if v:
            print(f"I[{comp}] median {np.median(v):+.4g} (n={len(v)})")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    seed = _seed(args, cfg)
    ok = True

    worst = max(checks.two_loop_oracle_error(seed + i, n, m)
                for i, (n, m) in enumerate((n, m) for n in range(2, 11) for m in range(1, 11)))
    ok &= _report("two-loop vs dense BFGS", worst, 1e-10)

    worst = 0.0
    for family in ("quadratic", "logistic"):
        for task, x0 in make_synthetic_family(family, 6, 2, seed):
            _, g = task.value_and_grad(x0)
            worst = max(worst, checks.rel_err(g, checks.central_diff(task.value, x0),
                                              rel_floor=checks.GRAD_REL_FLOOR))
    for task, x0 in make_random_mlp_family(2, seed, n_samples=4, p=16, hidden=(3,)):
        _, g = task.value_and_grad(x0)
        worst = max(worst, checks.rel_err(g, checks.central_diff(task.value, x0),
                                              rel_floor=checks.GRAD_REL_FLOOR))
    ok &= _report("task gradients vs finite differences", worst, 1e-5)

    rng = Rng(seed)
    worst = 0.0
    for K in (1, 2, 3):
        task, x0 = make_synthetic_family("quadratic", 3, 1, seed + K)[0]
        theta = checks.interior_policy(rng, task, x0, K)
        gt, fd, _ = checks.tbptt_check(task, x0, theta, K)
        worst = max(worst, checks.rel_err(gt, fd, rel_floor=checks.GRAD_REL_FLOOR))
    ok &= _report("TBPTT gradient vs frozen-input differences", worst, 1e-5)
    return 0 if ok else 2


def _report(name, err, tol) -> bool:
    good = err <= tol
    print(f"[{'PASS' if good else 'FAIL'}] {name}: max rel err {err:.3e} (tol {tol:.0e})")
    return good


COMMANDS = {"train": cmd_train, "run": cmd_run, "compare": cmd_compare, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = C.load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NonFiniteError, OSError, RuntimeError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
