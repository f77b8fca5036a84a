"""Reconstruction error measures on nodal fields."""

import numpy as np


def relative_l2_error(f_est, f_true, weights):
    """``||f_est - f_true|| / ||f_true||`` in the lumped-mass weighted norm."""
    f_est = np.asarray(f_est, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    w = np.asarray(weights, dtype=float)
    denom = np.sqrt(np.sum(w * f_true ** 2))
    if denom == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.sqrt(np.sum(w * (f_est - f_true) ** 2)) / denom)


def jaccard_index(f_est, f_true, level):
    """``|A & B| / |A | B|`` for the node sets ``{f >= level}``; 1 if both empty."""
    a = np.asarray(f_est) >= level
    b = np.asarray(f_true) >= level
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def compute_metrics(f_est, f_true, weights, spec):
    """Relative L2 error and support Jaccard (threshold half the top phase value)."""
    level = 0.5 * spec.max_value
    return {
        "relative_l2_error": relative_l2_error(f_est, f_true, weights),
        "jaccard": jaccard_index(f_est, f_true, level),
    }
