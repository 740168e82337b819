"""Python access to the lami pipeline: synthetic corpora, runs and metrics."""

from ._lami import (
    Corpus,
    DataError,
    EvalReport,
    GraphStats,
    TrainingError,
    UsageError,
    compute_metrics,
    generate_synthetic,
    normalize_config,
    run,
)

__all__ = [
    "Corpus",
    "DataError",
    "EvalReport",
    "GraphStats",
    "TrainingError",
    "UsageError",
    "compute_metrics",
    "generate_synthetic",
    "normalize_config",
    "run",
]
