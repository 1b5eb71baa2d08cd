"""Tabular preference-optimisation games: losses, dynamics, solvers and diagnostics."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .core import (
    APPENDIX_D_ENTRIES,
    GameSpec,
    PreferenceMatrix,
    appendix_d_game,
    make_rng,
    random_game,
    validate_preference_matrix,
)
from .dynamics import (
    Algorithm,
    AlgorithmKind,
    DynamicsConfig,
    algorithm_gradient,
    expected_update,
    run_dynamics,
    stochastic_update,
)
from .losses import CurrentPolicy, Fixed, GeometricMixture, LossId, population_gradient, population_loss
from .solvers import (
    best_response,
    exploitability,
    rlhf_closed_form,
    solve_ipo_md_fixed_point,
    solve_regularised_nash,
)

__all__ = [
    "APPENDIX_D_ENTRIES",
    "Algorithm",
    "AlgorithmKind",
    "CurrentPolicy",
    "DynamicsConfig",
    "Fixed",
    "GameSpec",
    "GeometricMixture",
    "LossId",
    "PreferenceMatrix",
    "algorithm_gradient",
    "appendix_d_game",
    "best_response",
    "expected_update",
    "exploitability",
    "make_rng",
    "population_gradient",
    "population_loss",
    "random_game",
    "rlhf_closed_form",
    "run_dynamics",
    "solve_ipo_md_fixed_point",
    "solve_regularised_nash",
    "stochastic_update",
    "validate_preference_matrix",
]
