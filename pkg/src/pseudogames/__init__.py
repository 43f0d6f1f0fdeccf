"""Markov pseudo-games, equilibrium computation by exploitability
minimization, and Markov exchange economies."""

__version__ = "0.1.0"

from .game import (
    History,
    PseudoGameSpec,
    SpecificationError,
    TransitionModel,
    UnsupportedModelError,
    constraint_values,
    is_feasible,
    reward,
    sample_initial,
    step,
)
from .economy import (
    EconomyConfig,
    EconomyScheme,
    EconomyState,
    MarketAction,
    MarkovExchangeEconomy,
    UtilityFamily,
    build_pseudo_game,
    classify_completeness,
    sample_random_economy,
    utility,
)
from .policies import (
    AdversaryParams,
    Architecture,
    GenericScheme,
    PolicyParams,
    ProjectionBlock,
    ProjectionSpec,
    dependent_eval,
    finite_diff_check,
    grad_policy,
    policy_eval,
)
from .rollout import (
    GradientEstimate,
    PayoffEstimate,
    RolloutConfig,
    SchemeDeviation,
    SchemePolicy,
    cumulative_regret_estimate,
    gradient_estimate,
    payoff_estimate,
    q_value_estimate,
    sample_histories,
    sample_history,
    state_value_estimate,
    visitation_histogram,
)
from .solver import (
    AdversaryEvalConfig,
    DivergenceError,
    TrainTrace,
    TtsgdaConfig,
    best_iterate,
    exploitability_estimate,
    mismatch_diagnostic,
    state_exploitability_estimate,
    ttsgda,
)

__all__ = [name for name in dir() if not name.startswith("_")]
