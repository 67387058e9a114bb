"""Input validation helpers shared across modules."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array as _sk_check_array

# Propensities are floored before any power or ratio.
PROPENSITY_FLOOR = 1e-12


def check_features(X, name="X"):
    """Return ``X`` as a finite float64 matrix of shape (n, d)."""
    X = _sk_check_array(X, dtype=np.float64, ensure_2d=True, input_name=name)
    return X


def check_probability_matrix(P, n_rows=None, n_cols=None, name="propensities", atol=1e-6):
    """Validate a row-stochastic matrix and return it as float64."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 1:
        P = P[None, :]
    if P.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {P.shape}")
    if n_rows is not None and P.shape[0] != n_rows:
        raise ValueError(f"{name} has {P.shape[0]} rows, expected {n_rows}")
    if n_cols is not None and P.shape[1] != n_cols:
        raise ValueError(f"{name} has {P.shape[1]} columns, expected {n_cols}")
    if not np.all(np.isfinite(P)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(P < 0):
        raise ValueError(f"{name} contains negative entries")
    if not np.allclose(P.sum(axis=1), 1.0, rtol=0.0, atol=atol):
        raise ValueError(f"{name} rows must sum to 1 (atol={atol})")
    return P


def check_scalar_in(value, name, low=None, high=None, low_inclusive=True, high_inclusive=True):
    """Check that a real scalar lies in the given interval and return it as float."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if np.isnan(value):
        raise ValueError(f"{name} must not be NaN")
    if low is not None:
        bad = value < low if low_inclusive else value <= low
        if bad:
            op = ">=" if low_inclusive else ">"
            raise ValueError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        bad = value > high if high_inclusive else value >= high
        if bad:
            op = "<=" if high_inclusive else "<"
            raise ValueError(f"{name} must be {op} {high}, got {value}")
    return value


def floor_propensities(P):
    return np.maximum(np.asarray(P, dtype=np.float64), PROPENSITY_FLOOR)
