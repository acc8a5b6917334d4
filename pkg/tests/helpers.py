"""Helpers shared by the metric tests, the pipeline rehearsal and the acceptance suite."""

import math

from lbfgs_pi.harness import (
    IterRow,
    OptimizerSpec,
    RunRecord,
    StopCriteria,
    export_report,
    index_Ia,
    read_traces_csv,
    run_many,
)
from lbfgs_pi.harness.runner import KINDS
from lbfgs_pi.numcore import Rng
from lbfgs_pi.policy import init_params
from lbfgs_pi.tasks import load_idx, make_task_set


def make_record(task_id, optimizer, gnorms, seconds=None, fs=None):
    n = len(gnorms)
    seconds = seconds if seconds is not None else [0.5 * k for k in range(n)]
    fs = fs if fs is not None else [1.0 + 1.0 / (k + 1) for k in range(n)]
    rows = [IterRow(k, fs[k], gnorms[k], math.nan, seconds[k], k + 1) for k in range(n)]
    return RunRecord(task_id, optimizer, rows)


def timed(task_id, optimizer, t_f):
    """Record crossing ``|g| < 1e-5`` at ``t_f`` seconds, or never when ``t_f`` is inf."""
    if math.isinf(t_f):
        return make_record(task_id, optimizer, [1.0, 1e-3], [0.0, 1.0])
    return make_record(task_id, optimizer, [1.0, 1e-6], [0.0, t_f])


def run_pipeline(train_paths, test_paths, out_dir, batch_size=1000, side=8):
    """Task sets with the paper's counts, five optimizers on five test tasks, exported report."""
    train_set = make_task_set(load_idx(*train_paths), batch_size, 60, 1, seed=0, side=side)
    test_set = make_task_set(load_idx(*test_paths), batch_size, 10, 100, seed=1, side=side)
    assert len(train_set) == 60
    assert len(test_set) == 1000
    theta = init_params(Rng(0).spawn(1))
    chosen = test_set[::200]
    jobs = []
    for kind in KINDS:
        spec = OptimizerSpec(kind, theta=theta if kind == "lbfgs_pi" else None)
        for i, (task, x0) in enumerate(chosen):
            jobs.append((task, x0, spec, f"{task.id}#{i}"))
    records = run_many(jobs, StopCriteria(100, 1e-8))
    paths = export_report(records, out_dir)
    back = read_traces_csv(paths["traces"])
    assert len(back) == 25
    for rec in back:
        ks = [r.k for r in rec.rows]
        assert ks == list(range(len(ks))) and len(ks) <= 101
        assert all(math.isfinite(r.f) and math.isfinite(r.gnorm) for r in rec.rows)
    for rec in back:
        if rec.optimizer != "lbfgs_pi":
            ref = next(r for r in back if r.task_id == rec.task_id and r.optimizer == "lbfgs_pi")
            assert math.isfinite(index_Ia(rec, ref, "min"))
            assert math.isfinite(index_Ia(rec, ref, "final"))
    return records
