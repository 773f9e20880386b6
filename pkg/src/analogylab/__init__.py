"""Analogical zero-shot transfer between factored MDPs, at tabular scale."""

from .analogy import (
    AnalogyCertificate,
    SemanticMap,
    build_analogous_target,
    check_affordance_preserving,
    induced_policy,
    lift_h,
    state_map,
)
from .mdp import (
    ContractViolation,
    ConvergenceError,
    FactoredState,
    StateEmbedding,
    TabularMdp,
    bellman_backup,
    estimate_lipschitz,
    evaluate_policy,
    q_from_v,
    q_max,
    softmax_policy,
    tv_distance,
    validate_mdp,
    value_iteration,
)

__version__ = "0.1.0"
