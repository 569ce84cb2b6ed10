"""Spectral Galerkin simulation and analysis of damped wave equations u_tt + u_t - Δu = p(t, u)."""

__version__ = "0.1.0"

from .attractor import (
    AttractorApprox,
    EnsembleSpec,
    e1_bound,
    hausdorff_semidist,
    invariance_check,
    lifted_invariance_probe,
    pullback_section,
    pullback_sections,
    semicontinuity_study,
    uniform_attractor,
    union,
)
from .config import ExperimentConfig, parse_config, serialize_config
from .diagnostics import (
    GronwallSpec,
    absorbing_entry,
    dissipation_residual,
    energy_breakdown,
    gronwall_bound,
    interpolation_check,
    linear_decay_fit,
    strichartz_norm,
    strichartz_windows,
    tmax_bound,
)
from .errors import (
    BlowUpError,
    ConfigurationError,
    DampwaveError,
    DomainError,
    EvaluationError,
    FitError,
    HorizonTooShortError,
    NonAbsorptionError,
    ReproducibilityError,
    ShapeError,
)
from .solver import SolverConfig, Trajectory, cocycle, integrate, integrate_ensemble, rhs, set_workers, solve_linear
from .spectral import (
    Basis,
    Domain,
    PhaseState,
    SpectralField,
    build_basis,
    energy_norm,
    evaluate,
    lpt_norm,
    project,
    sobolev_norm,
)
from .splitting import ladder, ladder_norms, split
from .symbols import Symbol, SymbolFamily, c1_metric, check_assumptions, hull_sample, shift
