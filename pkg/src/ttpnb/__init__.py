"""Gaussian Naive Bayes over vertically fragmented, noise-perturbed databases.

Sites hold disjoint attribute blocks of the same rows. Each perturbs its
columns with zero-mean noise of known variance, summarizes its training rows
per class, and sends the sealed summary to a trusted coordinator, which
corrects the variances and broadcasts the assembled model.
"""

from .dataset import (
    PartitionedTable,
    SplitPlan,
    Table,
    generate_splits,
    join_fragments,
    load_csv,
    partition_vertical,
)
from .model import (
    ClassConditionalStats,
    GaussianNBModel,
    assemble_model,
    baseline_fit,
    classify,
    compute_stats,
    correct_variance,
)
from .perturb import Absolute, NoiseSpec, RatioOfSampleVariance, perturb_column, resolve_variance
from .protocol import CoordinatorConfig, new_coordinator, new_party
from .session import execute_session, run_session

__version__ = "0.1.0"

__all__ = [
    "Absolute",
    "ClassConditionalStats",
    "CoordinatorConfig",
    "GaussianNBModel",
    "NoiseSpec",
    "PartitionedTable",
    "RatioOfSampleVariance",
    "SplitPlan",
    "Table",
    "assemble_model",
    "baseline_fit",
    "classify",
    "compute_stats",
    "correct_variance",
    "execute_session",
    "generate_splits",
    "join_fragments",
    "load_csv",
    "new_coordinator",
    "new_party",
    "partition_vertical",
    "perturb_column",
    "resolve_variance",
    "run_session",
]
