"""Figure rendering for training-run artifacts.

This package is a pure consumer of the files the training CLI leaves in a
run directory (metrics CSVs, safe-set JSON history, config and summary
JSON) plus the benchmark CSV.  It never imports the trainer and never
writes into a run directory.
"""

from .loader import RunArtifacts, SchemaError, load_bench, load_run
from .figures import (plot_complexity, plot_learning_curves,
                      plot_safe_set_evolution)

__all__ = [
    "RunArtifacts",
    "SchemaError",
    "load_bench",
    "load_run",
    "plot_complexity",
    "plot_learning_curves",
    "plot_safe_set_evolution",
]
