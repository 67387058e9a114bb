"""Importance-weighted risk estimators and their bias/variance bounds.

All estimators share the form ``(1/n) sum_i c_i T_i`` where ``T_i`` is a
transformed importance weight of the logged action. The transforms are

=========  =====================================  ==============
variant    T_i                                    hyper
=========  =====================================  ==============
IPS        pi / pi0                               unused
IPS_MIN    min(pi / pi0, M)                       M > 0 (inf ok)
IPS_MAX    pi / max(pi0, tau)                     tau in [0, 1]
IPS_ALPHA  pi / pi0**alpha                        alpha in [0, 1]
IPS_BETA   (pi / pi0)**beta                       beta in [0, 1]
HARMONIC   l1 w / (l1 + w**2),  w = pi / pi0      l1 > 0
SHRINKAGE  w / (1 - l2 + l2 w), w = pi / pi0      l2 in [0, 1]
=========  =====================================  ==============

Logging propensities are floored at ``PROPENSITY_FLOOR`` before any ratio or
power.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import PROPENSITY_FLOOR, check_scalar_in, floor_propensities

__all__ = [
    "Variant",
    "EstimatorSpec",
    "RiskEstimate",
    "estimate_risk",
    "target_at_logged",
    "bias_bound_alpha",
    "variance_bound_alpha",
    "bias_bound_beta",
    "variance_bound_beta",
]


class Variant(str, enum.Enum):
    IPS = "ips"
    IPS_MIN = "ips_min"
    IPS_MAX = "ips_max"
    IPS_ALPHA = "ips_alpha"
    IPS_BETA = "ips_beta"
    HARMONIC = "harmonic"
    SHRINKAGE = "shrinkage"


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to apply and its hyper-parameter."""

    variant: Variant = Variant.IPS
    hyper: float = 0.0

    def __post_init__(self):
        v = Variant(self.variant)
        object.__setattr__(self, "variant", v)
        h = self.hyper
        if v is Variant.IPS_MIN:
            if not (h > 0):
                raise ValueError("M must be > 0")
        elif v is Variant.IPS:
            pass
        elif v is Variant.HARMONIC:
            check_scalar_in(h, "lambda1", 0.0, low_inclusive=False)
        else:
            check_scalar_in(h, v.value, 0.0, 1.0)
        object.__setattr__(self, "hyper", float(h))

    @classmethod
    def ips(cls):
        return cls(Variant.IPS)

    @classmethod
    def ips_min(cls, M):
        return cls(Variant.IPS_MIN, M)

    @classmethod
    def ips_max(cls, tau):
        return cls(Variant.IPS_MAX, tau)

    @classmethod
    def ips_alpha(cls, alpha):
        return cls(Variant.IPS_ALPHA, alpha)

    @classmethod
    def ips_beta(cls, beta):
        return cls(Variant.IPS_BETA, beta)

    @classmethod
    def harmonic(cls, lambda1):
        return cls(Variant.HARMONIC, lambda1)

    @classmethod
    def shrinkage(cls, lambda2):
        return cls(Variant.SHRINKAGE, lambda2)

    @property
    def is_linear(self):
        """True when the transformed weight is linear in ``pi``."""
        return self.variant in (Variant.IPS, Variant.IPS_MAX, Variant.IPS_ALPHA) or (
            self.variant is Variant.IPS_BETA and self.hyper == 1.0
        )

    def transform(self, pi, pi0):
        """Transformed weight ``T(pi, pi0)`` (arrays broadcast)."""
        pi = np.asarray(pi, dtype=np.float64)
        pi0 = floor_propensities(pi0)
        v, h = self.variant, self.hyper
        if v is Variant.IPS:
            return pi / pi0
        if v is Variant.IPS_MIN:
            return np.minimum(pi / pi0, h)
        if v is Variant.IPS_MAX:
            return pi / np.maximum(pi0, h)
        if v is Variant.IPS_ALPHA:
            return pi / pi0 ** h
        w = pi / pi0
        if v is Variant.IPS_BETA:
            return w ** h
        if v is Variant.HARMONIC:
            return h * w / (h + w * w)
        return w / (1.0 - h + h * w)

    def derivative(self, pi, pi0):
        """``dT/dpi`` evaluated elementwise.

        At ``pi = 0`` the beta transform with ``beta < 1`` has an infinite
        slope; it is reported as the slope at ``PROPENSITY_FLOOR`` instead.
        """
        pi = np.asarray(pi, dtype=np.float64)
        pi0 = floor_propensities(pi0)
        v, h = self.variant, self.hyper
        if v is Variant.IPS:
            return 1.0 / pi0
        if v is Variant.IPS_MIN:
            return np.where(pi / pi0 < h, 1.0 / pi0, 0.0)
        if v is Variant.IPS_MAX:
            return 1.0 / np.maximum(pi0, h)
        if v is Variant.IPS_ALPHA:
            return 1.0 / pi0 ** h
        w = np.maximum(pi, PROPENSITY_FLOOR) / pi0
        if v is Variant.IPS_BETA:
            return h * w ** (h - 1.0) / pi0
        if v is Variant.HARMONIC:
            return h * (h - w * w) / (h + w * w) ** 2 / pi0
        return (1.0 - h) / (1.0 - h + h * w) ** 2 / pi0


@dataclass(frozen=True)
class RiskEstimate:
    """Estimated risk with the per-point weighted costs."""

    value: float
    per_point: np.ndarray
    spec: EstimatorSpec

    @property
    def n(self):
        return self.per_point.shape[0]


def target_at_logged(ds, target):
    """``pi(a_i | x_i)`` from a matrix (n, K), a vector (n,) or a callable."""
    if callable(target):
        target = target(ds.X)
    T = np.asarray(target, dtype=np.float64)
    if T.ndim == 2:
        if T.shape != (ds.n, ds.K):
            raise ValueError(f"target propensities have shape {T.shape}, expected {(ds.n, ds.K)}")
        return T[np.arange(ds.n), ds.actions]
    if T.shape != (ds.n,):
        raise ValueError("target propensities must be (n, K) or (n,)")
    return T


def estimate_risk(spec: EstimatorSpec, ds, target) -> RiskEstimate:
    """Estimate ``R(pi)`` from logged data.

    Parameters
    ----------
    spec : EstimatorSpec
    ds : LoggedDataset
    target : ndarray (n, K), ndarray (n,) of logged-action propensities, or
        callable mapping features (n, d) to an (n, K) matrix.
    """
    if ds.n == 0:
        raise ValueError("empty dataset")
    pi = target_at_logged(ds, target)
    w = spec.transform(pi, ds.logged_propensities)
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite importance weights")
    per_point = ds.costs * w
    return RiskEstimate(float(np.mean(per_point)), per_point, spec)


# ----------------------------------------------------------------------------
# Population bounds on bias and variance.
#
# ``logging`` and ``target`` are (m, K) matrices over an enumerable set of
# contexts with weights ``context_weights`` (uniform if omitted), which also
# covers the empirical case where the contexts are the logged ones.


def _context_setup(logging, target, context_weights):
    P0 = floor_propensities(np.atleast_2d(logging))
    P = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if P.shape != P0.shape:
        raise ValueError("logging and target must have the same shape")
    if context_weights is None:
        nu = np.full(P.shape[0], 1.0 / P.shape[0])
    else:
        nu = np.asarray(context_weights, dtype=np.float64)
        if nu.shape != (P.shape[0],):
            raise ValueError("context_weights must have one entry per context")
    return P0, P, nu


def _problem_args(logging, target, context_weights):
    # An EnumerableProblem may be passed in place of the logging matrix.
    if hasattr(logging, "context_probs") and hasattr(logging, "logging"):
        return logging.logging, target, logging.context_probs
    return logging, target, context_weights


def bias_bound_alpha(alpha, logging, target, context_weights=None):
    """``E_{x, a ~ pi}[1 - pi0(a|x)^(1-alpha)]``."""
    alpha = check_scalar_in(alpha, "alpha", 0.0, 1.0)
    P0, P, nu = _context_setup(*_problem_args(logging, target, context_weights))
    if alpha == 1.0:
        return 0.0
    return float(nu @ np.sum(P * (1.0 - P0 ** (1.0 - alpha)), axis=1))


def variance_bound_alpha(alpha, logging, target, n, context_weights=None):
    """``(1/n) E_{x, a ~ pi}[pi(a|x) / pi0(a|x)^(2 alpha - 1)]``."""
    alpha = check_scalar_in(alpha, "alpha", 0.0, 1.0)
    if n < 1:
        raise ValueError("n must be >= 1")
    P0, P, nu = _context_setup(*_problem_args(logging, target, context_weights))
    return float(nu @ np.sum(P * P / P0 ** (2.0 * alpha - 1.0), axis=1)) / n


def bias_bound_beta(beta, logging, target, context_weights=None):
    """``E_{x, a ~ pi}[|(pi/pi0)^(beta-1) - 1|]``; terms with ``pi = 0`` vanish."""
    beta = check_scalar_in(beta, "beta", 0.0, 1.0)
    P0, P, nu = _context_setup(*_problem_args(logging, target, context_weights))
    if beta == 1.0:
        return 0.0
    safe = np.where(P > 0, P, 1.0)
    terms = np.where(P > 0, P * np.abs((safe / P0) ** (beta - 1.0) - 1.0), 0.0)
    return float(nu @ terms.sum(axis=1))


def variance_bound_beta(beta, logging, target, n, context_weights=None):
    """``(1/n) E_{x, a ~ pi}[(pi/pi0)^(2 beta - 1)]``; terms with ``pi = 0`` vanish."""
    beta = check_scalar_in(beta, "beta", 0.0, 1.0)
    if n < 1:
        raise ValueError("n must be >= 1")
    P0, P, nu = _context_setup(*_problem_args(logging, target, context_weights))
    safe = np.where(P > 0, P, 1.0)
    terms = np.where(P > 0, P * (safe / P0) ** (2.0 * beta - 1.0), 0.0)
    return float(nu @ terms.sum(axis=1)) / n
