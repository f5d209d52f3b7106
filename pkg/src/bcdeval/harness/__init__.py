from .experiment import (
    CorrelationMatrix,
    ExperimentConfig,
    ResultRow,
    correlate_metrics,
    emit_report,
    entropy_curve,
    run_cell,
    run_sweep,
    spearman,
)

__all__ = ["CorrelationMatrix", "ExperimentConfig", "ResultRow", "correlate_metrics", "emit_report",
           "entropy_curve", "run_cell", "run_sweep", "spearman"]
