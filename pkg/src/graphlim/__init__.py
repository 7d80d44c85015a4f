"""Adaptive network particle systems and their graphon continuum limits."""

from __future__ import annotations

__version__ = "0.1.0"

from .continuum_solver import (ContinuumSolution, PicardConfig, PicardDivergence,
                               contraction_window, mol_solve, picard_solve)
from .convergence_harness import (ConvergenceReport, StudyConfig, fit_rate,
                                  gronwall_envelope, residuals, run_study)
from .discrete_system import (DiscreteState, SolverAbort, Trajectory, duhamel_check,
                              discrete_assumption_check, integrate)
from .envelopes import apriori_envelope, iterate_partial_sum
from .grid import (Graphon, StepFunction1D, StepFunction2D, UnitGrid, cell_average_1d,
                   cell_average_2d, embed, l2_distance_1d, l2_distance_2d, restrict)
from .model_defs import (ModelSpec, check_assumptions, hnp_model, kuramoto_adaptive,
                         opinion_model)

__all__ = [
    "ContinuumSolution", "ConvergenceReport", "DiscreteState", "Graphon", "ModelSpec",
    "PicardConfig", "PicardDivergence", "SolverAbort", "StepFunction1D", "StepFunction2D",
    "StudyConfig", "Trajectory", "UnitGrid", "apriori_envelope", "cell_average_1d",
    "cell_average_2d", "check_assumptions", "contraction_window", "discrete_assumption_check",
    "duhamel_check", "embed", "fit_rate", "gronwall_envelope", "hnp_model", "integrate",
    "iterate_partial_sum", "kuramoto_adaptive", "l2_distance_1d", "l2_distance_2d",
    "mol_solve", "opinion_model", "picard_solve", "residuals", "restrict", "run_study",
]
