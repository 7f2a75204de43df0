"""Penalized pseudo-likelihood estimation for hidden-state regression."""

from ._nphmm import (
    Spline,
    check_h3_bounds,
    estimate_mixing_decay,
    hausdorff_half_circle,
    hellinger,
    l2_error_half_circle,
    lambda_schedule,
    pseudo_log_likelihood,
    run_em,
    run_experiment,
    simulate,
    stationary_density,
    transition_density,
)

__all__ = [
    "Spline",
    "check_h3_bounds",
    "estimate_mixing_decay",
    "hausdorff_half_circle",
    "hellinger",
    "l2_error_half_circle",
    "lambda_schedule",
    "pseudo_log_likelihood",
    "run_em",
    "run_experiment",
    "simulate",
    "stationary_density",
    "transition_density",
]
