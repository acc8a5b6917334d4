"""CSV trace export and JSON summaries (plot-ready data, no rendering)."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

from .metrics import compute_tf, index_table, match_records, win_tie_table
from .runner import IterRow, RunRecord

TRACE_HEADER = ["task_id", "optimizer", "k", "f", "gnorm", "t_k", "seconds", "f_evals"]


def _num(v: float) -> str:
    return repr(float(v))


def write_traces_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for rec in records:
            for r in rec.rows:
                w.writerow([rec.task_id, rec.optimizer, r.k, _num(r.f), _num(r.gnorm), _num(r.t),
                            _num(r.seconds), r.f_evals])


def read_traces_csv(path) -> list[RunRecord]:
    records: dict = {}
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in rd:
            key = (row[0], row[1])
            rec = records.get(key)
            if rec is None:
                rec = records[key] = RunRecord(row[0], row[1])
            rec.rows.append(IterRow(int(row[2]), float(row[3]), float(row[4]), float(row[5]),
                                    float(row[6]), int(row[7])))
    return list(records.values())


def _json_num(v):
    # JSON has no infinity; keep it explicit
    if v is None:
        return None
    return "inf" if math.isinf(v) else v


def summarize(records, eps_grid, reference: str = "lbfgs_pi", clock: str = "seconds") -> dict:
    runs = defaultdict(dict)
    for rec in records:
        runs[rec.task_id][rec.optimizer] = {
            "f_star": rec.f_star,
            "f_final": rec.f_final,
            "iterations": rec.iterations,
            "status": rec.status,
            "warmup": rec.warmup,
            "t_f": {repr(e): _json_num(compute_tf(rec, e, clock)) for e in eps_grid},
        }
    summary = {"reference": reference, "clock": clock, "eps_grid": list(eps_grid), "runs": runs}
    if any(r.optimizer == reference for r in records):
        pairs = match_records(records, reference)
        summary["index"] = {
            variant: {comp: dict(vals) for comp, vals in index_table(pairs, variant).items()}
            for variant in ("min", "final")
        }
        summary["win_tie"] = win_tie_table(pairs, eps_grid, clock)
    return summary


def export_report(records, out_dir, eps_grid=(1e-3, 1e-4, 1e-5), reference: str = "lbfgs_pi",
                  clock: str = "seconds") -> dict:
    """Write ``traces.csv`` and ``summary.json`` under ``out_dir``; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = list(records)
    paths = {"traces": out / "traces.csv", "summary": out / "summary.json"}
    write_traces_csv(records, paths["traces"])
    with open(paths["summary"], "w") as fh:
        json.dump(summarize(records, eps_grid, reference, clock), fh, indent=1)
    return paths
