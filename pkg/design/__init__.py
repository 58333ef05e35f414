from design.objective import (ObjectiveBreakdown, ObservationOperator, penalty, penalty_gradient,
                              penalty_hessian_diag, q_state_gradient, q_state_hessian_action,
                              scattered_energy)
from design.optimizer import (DesignProblem, DeterministicVariant, NewtonConfig, OptimizationTrace,
                              SaaVariant, TaylorVariant, make_variant, minimize, steihaug_pcg,
                              variant_gradient, variant_objective)
from design.sensitivity import (AdjointWorkspace, TaylorSourceState, finite_difference_check,
                                saa_weights, taylor_source_state, tau_gradient_det, tau_gradient_saa,
                                tau_gradient_taylor, tau_hessian_action_det, zeta_gradient,
                                zeta_hessian_action)

__all__ = [
    'ObjectiveBreakdown', 'ObservationOperator', 'penalty', 'penalty_gradient', 'penalty_hessian_diag',
    'q_state_gradient', 'q_state_hessian_action', 'scattered_energy', 'DesignProblem',
    'DeterministicVariant', 'NewtonConfig', 'OptimizationTrace', 'SaaVariant', 'TaylorVariant',
    'make_variant', 'minimize', 'steihaug_pcg', 'variant_gradient', 'variant_objective',
    'AdjointWorkspace', 'TaylorSourceState', 'finite_difference_check', 'saa_weights',
    'taylor_source_state', 'tau_gradient_det', 'tau_gradient_saa', 'tau_gradient_taylor',
    'tau_hessian_action_det', 'zeta_gradient', 'zeta_hessian_action',
]
