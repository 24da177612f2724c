"""Numerical laboratory for self-stabilizing diffusions.

Builds the self-consistent mean-attraction drift by fixed-point
iteration, simulates the related diffusion family, evaluates path action
functionals and quasi-potentials (numerically and in closed form for
gradient models), and measures exit times and locations against the
exponential exit law.
"""

from .action import (ActionSpec, DiscretePath, action, action_gradient,
                     boundary_min, minimize_cost, quasipotential_closed_form,
                     quasipotential_numeric)
from .domain import Ball, Ellipse, Implicit, Interval
from .drift import (DriftField, DriftGridSpec, drift_eval, field_difference,
                    gamma_apply, lambda_norm, limit_drift, load_drift_field,
                    save_drift_field, solve_self_consistent_drift)
from .exits import (ExitRecord, exit_statistics, kramers_fit, read_exit_records,
                    run_exit_trials, write_exit_records)
from .flow import (PathSample, find_equilibrium, integrate_flow,
                   integrate_relaxed_flow, verify_domain_stability)
from .model import (DissipativityConstants, ModelSpec, RadialProfile,
                    check_assumptions, estimate_constants, interaction_force,
                    interaction_jacobian, interaction_potential)
from .noise import NoisePlan
from .sde import (Classical, Frozen, Limiting, Particle, Tracking,
                  empirical_moment, moment_bound_check, simulate,
                  simulate_ensemble)

__version__ = "0.1.0"
