"""Frequent learning-pathway mining: sequence clustering and transition-graph discovery."""

import numba

# TBB in common distro builds is too old for numba; prefer OpenMP, fall back quietly.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

from .errors import ConfigError, DataError, LearnPathError, ParameterError  # noqa: E402
from .eventlog import (  # noqa: E402
    EventRecord,
    IngestConfig,
    SequenceTable,
    TimestampFormat,
    extract_sequences,
    parse_event_log,
    sample_students,
)
from .hac import (  # noqa: E402
    ClusterAssignment,
    ClusterStatsRow,
    Dendrogram,
    Linkage,
    agglomerate,
    cluster_stats,
    cut_tree,
)
from .seqdist import CondensedDistanceMatrix, edit_distance, pairwise_distances  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "ClusterAssignment",
    "ClusterStatsRow",
    "CondensedDistanceMatrix",
    "ConfigError",
    "DataError",
    "Dendrogram",
    "EventRecord",
    "IngestConfig",
    "LearnPathError",
    "Linkage",
    "ParameterError",
    "SequenceTable",
    "TimestampFormat",
    "agglomerate",
    "cluster_stats",
    "cut_tree",
    "edit_distance",
    "extract_sequences",
    "pairwise_distances",
    "parse_event_log",
    "sample_students",
]
