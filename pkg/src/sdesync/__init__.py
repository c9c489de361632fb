"""Coupled reverse-time SDE simulation and verification engine.

Analytic-score toy models (Gaussian and Gaussian-mixture conditionals) make
every piece of the machinery checkable at desk scale: exact forward kernels,
pathwise time reversal through structured backward Brownian increments,
shared-noise and resampling-based semantic editing, orthonormal coupling
rules and their greedy-transport properties.
"""

from ._backend import backend_name
from .coupling import (CouplingRule, FixedOrthonormal, RandomOrthonormal,
                       Reflection, Synchronous, apply_rule, coupled_edit,
                       expected_increment_cost, greedy_optimality_experiment,
                       mc_increment_cost, random_orthonormal,
                       trace_identity_check)
from .editing import (EditConfig, EditResult, independent_edit,
                      resampling_ode_edit, reverse_drift, reverse_integrate,
                      sync_edit)
from .paths import (BrownianPath, Direction, TimeGrid, Trajectory,
                    backward_increments, forward_closed_form, forward_euler,
                    reverse_trajectory, sample_brownian)
from .schedule import (ConstantOU, NoiseSchedule, QuadratureError,
                       RectifiedFlow, ScheduleDomainError, Tabulated,
                       decay_m_quadrature, perturbation_variance_quadrature,
                       transition_phi_quadrature)
from .scores import (ConditionalGaussianFamily, ConditionalMixtureFamily,
                     PromptLabel, guided_score, log_marginal_density,
                     reverse_rf_velocity, rf_sde_drift, rf_velocity, score)
from .verify import (convergence_study, empirical_w2_1d,
                     finite_diff_score_check, marginal_check,
                     pathwise_reversal_error, sample_reverse_endpoints)

__version__ = "0.1.0"
