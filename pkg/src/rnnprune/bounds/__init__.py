"""Spectral quantities, bound evaluators and the leverage-sampling check."""

from .formulas import (
    C_HAT,
    BoundReport,
    MeasuredTerms,
    NormBudget,
    approx_bound_rhs,
    approx_lhs,
    budget_from_params,
    covering_bound,
    generalization_bound_rhs,
    generalization_bound_terms,
    hatted_budget,
    m_t,
    measured_terms,
    r_infinity,
    spectral_bound_quantities,
    spectral_generalization_bound_rhs,
)
from .prop2 import Prop2Result, check_prop2, sampled_loss
from .spectral import (
    SpectralProfile,
    degrees_of_freedom,
    lambda_condition,
    leverage_scores,
    profile_of,
    sample_index_set,
    solve_lambda,
)
