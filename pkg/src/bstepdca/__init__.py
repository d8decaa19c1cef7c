"""Steered exact-penalty DCA with boosting for nonsmooth DC optimal control."""

from .driver import (
    AdaptiveStep,
    ConstantStep,
    IterationRecord,
    NuAdaptive,
    NuSequence,
    NuStepScaled,
    PreviousStep,
    RunSummary,
    SolverConfig,
    Stopping,
    Termination,
    run,
)
from .penalty import BoxMode, PenaltyConfig
from .problem import ProblemSpec, X0Spec, load_problem, save_problem
from .transcription import DiscreteTrajectory, Grid

__all__ = [
    "AdaptiveStep",
    "BoxMode",
    "ConstantStep",
    "DiscreteTrajectory",
    "Grid",
    "IterationRecord",
    "NuAdaptive",
    "NuSequence",
    "NuStepScaled",
    "PenaltyConfig",
    "PreviousStep",
    "ProblemSpec",
    "RunSummary",
    "SolverConfig",
    "Stopping",
    "Termination",
    "X0Spec",
    "load_problem",
    "run",
    "save_problem",
]
