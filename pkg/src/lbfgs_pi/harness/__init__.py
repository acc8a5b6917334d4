from .metrics import MetricError, compute_tf, index_Ia, index_table, match_records, win_tie_table
from .report import export_report, read_traces_csv, summarize, write_traces_csv
from .runner import IterRow, OptimizerSpec, RunRecord, StopCriteria, run_many, run_optimizer

__all__ = [
    "IterRow",
    "MetricError",
    "OptimizerSpec",
    "RunRecord",
    "StopCriteria",
    "compute_tf",
    "export_report",
    "index_Ia",
    "index_table",
    "match_records",
    "read_traces_csv",
    "run_many",
    "run_optimizer",
    "summarize",
    "win_tie_table",
    "write_traces_csv",
]
