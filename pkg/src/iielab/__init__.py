"""Interventional indirect effects with two mediators: influence-function
estimators, partial-identification bounds, and exact-enumeration checks."""

from .core import (
    ArmPair,
    Dataset,
    DegenerateDesignError,
    DiscreteProblem,
    EstimateReport,
    Estimand,
    NuisanceSet,
    Observation,
    PositivityError,
    RankError,
    RatioDegenerateError,
    ScaleError,
    TabularNuisanceSet,
    marginalize_outcomes,
)
from .sensitivity import SensitivityAssumption

__version__ = "0.1.0"

__all__ = [
    "ArmPair",
    "Dataset",
    "DegenerateDesignError",
    "DiscreteProblem",
    "EstimateReport",
    "Estimand",
    "NuisanceSet",
    "Observation",
    "PositivityError",
    "RankError",
    "RatioDegenerateError",
    "ScaleError",
    "SensitivityAssumption",
    "TabularNuisanceSet",
    "marginalize_outcomes",
    "__version__",
]
