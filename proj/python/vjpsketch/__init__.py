"""Unbiased randomized vector-Jacobian products for cheap backpropagation."""

from ._core import (
    correlated_exact_r_sample,
    estimate_distortion,
    iterations_for_accuracy,
    net_gain,
    pstar_from_weights,
    sketched_backward,
    svd,
    unbiased_lowrank_sketch,
)

__all__ = [
    "correlated_exact_r_sample",
    "estimate_distortion",
    "iterations_for_accuracy",
    "net_gain",
    "pstar_from_weights",
    "sketched_backward",
    "svd",
    "unbiased_lowrank_sketch",
]
