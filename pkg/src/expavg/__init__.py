"""Exponential-average tests under loss of identifiability.

A statistic curve over a threshold grid is aggregated either by the
exp-average functional or by its supremum; critical values come from a
weighted bootstrap or from simulating the limiting Gaussian-process law.
Ships a change-point Cox model for current-status data (NPMLE hazard via
the iterative convex minorant algorithm) and a closed-form Gaussian
change-point reference model.
"""

from .backend import BACKEND_NAME
from .core import (
    CaseWeights,
    Dataset,
    FitReport,
    ModelInterface,
    Observation,
    StatCurve,
    ZetaPrior,
    load_dataset_csv,
    make_uniform_prior,
    point_prior,
    validate_dataset,
)
from .stats import ExpAvgConfig, VarianceSource, exp_average, sup_stat

__all__ = [
    "BACKEND_NAME",
    "CaseWeights",
    "Dataset",
    "ExpAvgConfig",
    "FitReport",
    "ModelInterface",
    "Observation",
    "StatCurve",
    "VarianceSource",
    "ZetaPrior",
    "exp_average",
    "load_dataset_csv",
    "make_uniform_prior",
    "point_prior",
    "sup_stat",
    "validate_dataset",
]

__version__ = "0.1.0"
