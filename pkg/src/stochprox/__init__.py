"""Stochastic proximal gradient methods for objectives ``E f_k + E g_k``."""

from .core import (
    ComponentDistribution, ComponentPair, EmptyDistributionError, NegativeWeightError,
    NonFiniteError, ProductDistribution, ProxOracle, RngStream, ScheduleError, SmoothOracle,
    StepSchedule, ValidationError, ZeroWeightError, make_finite_distribution,
    sample_component, sample_indices, step, validate_schedule,
)
from .operators import ConvexSet, brute_force_prox, project
from .solvers import (
    DivergenceError, RunRecord, SolverConfig, StepBoundError, check_assumption1,
    check_psi_bound, fb_run, sgd_run, spg_run, spp_run,
)
from .diagnostics import (
    EnsembleStats, fejer_monitor, finite_diff_grad_check, median_trend, objective_gap,
    replicate,
)
from .apps import (
    FeasibilitySpec, LabeledSample, classification_psi, classification_subgradients,
    feasibility_psi, feasibility_subgradients, load_dataset, make_classification_problem,
    make_feasibility_problem, make_quadratic_problem, reference_minimizer,
    synth_classification,
)

__version__ = "0.1.0"
