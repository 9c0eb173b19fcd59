"""Bayesian structural VARs with a factor error structure and linear inequality restrictions."""

from __future__ import annotations

from .errors import (
    DegeneratePosterior,
    FactorSVARError,
    ImproperPosterior,
    InfeasibleRegion,
    InfeasibleRegionError,
    InvalidBounds,
    NumericalError,
    NumericallyDegenerate,
    PatternSearchExhausted,
    RankDeficientLoadings,
    StabilityNotFound,
    ValidationError,
)
from .model import (
    ChainConfig,
    Dataset,
    HorseshoeState,
    LinearConstraint,
    ModelDims,
    ParameterDraw,
    PriorConfig,
    RestrictionSet,
    expand_signs,
    shock_signs,
    validate,
)
from .sampler import PosteriorChain, run_gibbs

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "Dataset",
    "DegeneratePosterior",
    "FactorSVARError",
    "HorseshoeState",
    "ImproperPosterior",
    "InfeasibleRegion",
    "InfeasibleRegionError",
    "InvalidBounds",
    "LinearConstraint",
    "ModelDims",
    "NumericalError",
    "NumericallyDegenerate",
    "ParameterDraw",
    "PatternSearchExhausted",
    "PosteriorChain",
    "PriorConfig",
    "RankDeficientLoadings",
    "RestrictionSet",
    "StabilityNotFound",
    "ValidationError",
    "expand_signs",
    "run_gibbs",
    "shock_signs",
    "validate",
]
