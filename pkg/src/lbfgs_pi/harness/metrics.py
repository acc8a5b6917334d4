"""Comparison metrics: time-to-precision, win/tie tables and the log-ratio index."""

from __future__ import annotations

import math
from collections import defaultdict

from ..numcore import UsageError
from .runner import RunRecord


class MetricError(ValueError):
    """A metric is undefined for this record (e.g. nonpositive objective)."""


def compute_tf(record: RunRecord, eps: float, clock: str = "seconds") -> float:
    """First time (or iteration count) at which ``|g| < eps``; ``inf`` if never.

    ``clock='iterations'`` gives a deterministic variant that makes ties
    meaningful.
    """
    if clock not in ("seconds", "iterations"):
        raise UsageError(f"unknown clock {clock!r}")
    for row in record.rows:
        if row.gnorm < eps:
            return row.seconds if clock == "seconds" else float(row.k)
    return math.inf


def index_Ia(record_a: RunRecord, record_pi: RunRecord, variant: str = "min") -> float:
    """``ln(f_a / f_pi)``; positive when the policy run reached the lower value."""
    if variant == "min":
        fa, fp = record_a.f_star, record_pi.f_star
    elif variant == "final":
        fa, fp = record_a.f_final, record_pi.f_final
    else:
        raise UsageError(f"unknown variant {variant!r}")
    if not (fa > 0 and fp > 0):
        raise MetricError(
            f"index undefined for task {record_pi.task_id}: nonpositive objective ({fa}, {fp})"
        )
    return math.log(fa / fp)


def win_tie_table(pairs, eps_grid, clock: str = "seconds") -> list[dict]:
    """Win/tie/loss percentages of the policy against each competitor.

    ``pairs`` maps competitor name to a list of ``(record_pi, record_a)``
    on matched task instances. A tie is an exact time match, which covers
    the case where neither run reached the precision.
    """
    rows = []
    for comp, plist in pairs.items():
        for eps in eps_grid:
            win = tie = loss = 0
            for rec_pi, rec_a in plist:
                tp = compute_tf(rec_pi, eps, clock)
                ta = compute_tf(rec_a, eps, clock)
                if tp == ta:
                    tie += 1
                elif tp < ta:
                    win += 1
                else:
                    loss += 1
            n = len(plist)
            pct = (lambda c: 100.0 * c / n) if n else (lambda c: 0.0)
            rows.append({
                "competitor": comp,
                "eps": eps,
                "n": n,
                "win": pct(win),
                "tie": pct(tie),
                "loss": pct(loss),
            })
    return rows


def match_records(records, reference: str = "lbfgs_pi", include_warmup: bool = False):
    """Pair every competitor run with the reference run on the same task instance."""
    by_opt = defaultdict(dict)
    for rec in records:
        if rec.warmup and not include_warmup:
            continue
        by_opt[rec.optimizer][rec.task_id] = rec
    if reference not in by_opt:
        raise UsageError(f"no runs for reference optimizer {reference!r}")
    ref = by_opt.pop(reference)
    pairs = {}
    for comp, runs in by_opt.items():
        pairs[comp] = [(ref[tid], runs[tid]) for tid in ref if tid in runs]
    return pairs


def index_table(pairs, variant: str = "min") -> dict:
    """Per competitor: list of ``(task_id, I_a or None)``; ``None`` marks an undefined metric."""
    out = {}
    for comp, plist in pairs.items():
        vals = []
        for rec_pi, rec_a in plist:
            try:
                vals.append((rec_pi.task_id, index_Ia(rec_a, rec_pi, variant)))
            except MetricError:
                vals.append((rec_pi.task_id, None))
        out[comp] = vals
    return out
