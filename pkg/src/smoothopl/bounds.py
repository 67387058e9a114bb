"""Generalization bounds for smoothed importance-weighted risk estimates.

The central two-sided bound, for a posterior ``Q`` with policy ``pi_Q``, reads

    |R(pi_Q) - R_n^alpha(pi_Q)| <= sqrt(KL1 / 2n) + B + KL2 / (n lam) + lam V / 2

with ``KL1 = KL + log(4 sqrt(n) / delta)``, ``KL2 = KL + log(4 / delta)``,

    B = 1 - (1/n) sum_i sum_a pi_Q(a|x_i) pi0(a|x_i)^(1 - alpha)
    V = (1/n) sum_i [sum_a pi_Q(a|x_i) pi0(a|x_i)^(1 - 2 alpha)
                     + pi_Q(a_i|x_i) c_i^2 / pi0(a_i|x_i)^(2 alpha)]

The ``objective_*`` functions assemble training objectives and return their
derivatives with respect to the target propensity matrix and the KL term, so
the trainer only has to chain them through the policy.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._validation import check_scalar_in, floor_propensities
from .estimators import EstimatorSpec, RiskEstimate, Variant

__all__ = [
    "BoundConfig",
    "BoundTerms",
    "ObjectiveValue",
    "LambdaClampWarning",
    "SAKHI1_LAMBDA_MAX",
    "kl_gaussian_upper",
    "kl_gaussian_exact",
    "bias_term_B",
    "second_moment_term_V",
    "lambda_star",
    "compute_terms",
    "main_bound",
    "adaptive_alpha",
    "adaptive_alpha_objective",
    "bound_any_lambda",
    "bound_any_alpha",
    "oracle_inequality_rhs",
    "prop51_bound",
    "london_bound",
    "sakhi1_bound",
    "sakhi2_bound",
    "sakhi2_lambda_grid",
    "sakhi_V_tau",
    "g",
    "learning_principle_objective",
    "bound_report",
    "paper_default_alpha",
    "paper_default_tau",
    "objective_ours",
    "objective_london",
    "objective_sakhi1",
    "objective_sakhi2",
    "objective_learning_principle",
    "objective_estimate",
]

SAKHI1_LAMBDA_MAX = 30.0


class LambdaClampWarning(RuntimeWarning):
    """The exponential-bound ``lambda`` was clamped to avoid overflow."""


def paper_default_tau(n):
    """``tau = n^(-1/4)``."""
    return float(n) ** -0.25


def paper_default_alpha(n):
    """``alpha = 1 - n^(-1/4)``."""
    return 1.0 - float(n) ** -0.25


@dataclass(frozen=True)
class BoundConfig:
    """Confidence level and the choice of ``lambda``.

    Attributes
    ----------
    delta : float in (0, 1)
    alpha : float in [0, 1]
    lambda_mode : {"star", "fixed", "grid"}
        ``star`` uses the closed-form minimizer recomputed from the current
        terms; ``fixed`` uses ``lam``; ``grid`` minimizes over ``lambda_grid``
        with a union bound (``delta`` split evenly across the grid).
    lam : float, optional
    lambda_grid : sequence of float, optional
    n : int, optional
        Sample size used in the constants. Defaults to the dataset size.
    """

    delta: float = 0.05
    alpha: float = 1.0
    lambda_mode: str = "star"
    lam: Optional[float] = None
    lambda_grid: Optional[Sequence[float]] = None
    n: Optional[int] = None

    def __post_init__(self):
        check_scalar_in(self.delta, "delta", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
        check_scalar_in(self.alpha, "alpha", 0.0, 1.0)
        if self.lambda_mode not in ("star", "fixed", "grid"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.lambda_mode == "fixed":
            if self.lam is None or not self.lam > 0:
                raise ValueError("fixed lambda_mode needs lam > 0")
        if self.lambda_mode == "grid":
            grid = np.asarray(self.lambda_grid if self.lambda_grid is not None else [], dtype=float)
            if grid.size == 0 or np.any(grid <= 0):
                raise ValueError("lambda grid must be nonempty and positive")
            object.__setattr__(self, "lambda_grid", tuple(float(x) for x in grid))
        if self.n is not None and int(self.n) < 1:
            raise ValueError("n must be >= 1")

    def with_alpha(self, alpha):
        return BoundConfig(self.delta, alpha, self.lambda_mode, self.lam, self.lambda_grid, self.n)


@dataclass(frozen=True)
class BoundTerms:
    """Components of the two-sided bound."""

    kl: float
    kl1: float
    kl2: float
    bias_term: float
    second_moment: float
    lam: float
    alpha: float
    n: int
    delta: float

    @property
    def penalty(self):
        """Bound on ``|R - R_hat|``."""
        return (
            math.sqrt(self.kl1 / (2.0 * self.n))
            + self.bias_term
            + self.kl2 / (self.n * self.lam)
            + 0.5 * self.lam * self.second_moment
        )


@dataclass
class ObjectiveValue:
    """A training objective with its partial derivatives.

    Attributes
    ----------
    total : float
    grad_P : ndarray (n, K)
        Derivative with respect to the target propensity matrix.
    grad_kl : float
        Derivative with respect to the KL upper bound.
    grad_dist2 : float
        Derivative with respect to ``||mu - mu0||^2`` outside of the KL.
    terms : dict
        Named components; ``terms[k]`` for ``k`` in ``parts`` sum to ``total``.
    parts : tuple of str
    grad_extra : dict
        Derivatives with respect to auxiliary scalars (e.g. ``log_lambda``).
    """

    total: float
    grad_P: np.ndarray
    grad_kl: float = 0.0
    grad_dist2: float = 0.0
    terms: dict = field(default_factory=dict)
    parts: tuple = ()
    grad_extra: dict = field(default_factory=dict)


# ----------------------------------------------------------------------------
# KL


def kl_gaussian_upper(mu, mu0, sigma, sigma0=1.0, dK=None):
    """Upper bound on the KL between isotropic Gaussian posteriors and priors.

    ``||mu - mu0||^2 / (2 sigma0^2) + (dK / 2) log(sigma0^2 / sigma^2)``.
    The Gumbel factor of mixed-logit policies is shared by prior and
    posterior and cancels.

    Raises
    ------
    ValueError
        If ``sigma > sigma0`` or ``sigma <= 0``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    if mu.shape != mu0.shape:
        raise ValueError("mu and mu0 must have the same shape")
    if not (sigma > 0 and sigma0 > 0):
        raise ValueError("sigma and sigma0 must be positive")
    if sigma > sigma0:
        raise ValueError(f"sigma={sigma} exceeds sigma0={sigma0}")
    dK = mu.size if dK is None else dK
    diff = mu - mu0
    return float(np.sum(diff * diff) / (2.0 * sigma0 ** 2) + 0.5 * dK * math.log(sigma0 ** 2 / sigma ** 2))


def kl_gaussian_exact(mu, mu0, sigma, sigma0=1.0, dK=None):
    """Exact KL between ``N(mu, sigma^2 I)`` and ``N(mu0, sigma0^2 I)``."""
    mu = np.asarray(mu, dtype=np.float64)
    mu0 = np.asarray(mu0, dtype=np.float64)
    dK = mu.size if dK is None else dK
    diff = mu - mu0
    r = sigma ** 2 / sigma0 ** 2
    return float(0.5 * (dK * r - dK + np.sum(diff * diff) / sigma0 ** 2 - dK * math.log(r)))


# ----------------------------------------------------------------------------
# Data-dependent terms


def _targets(ds, target):
    T = np.asarray(target(ds.X) if callable(target) else target, dtype=np.float64)
    if T.shape != (ds.n, ds.K):
        raise ValueError(f"target propensities must have shape {(ds.n, ds.K)}, got {T.shape}")
    return T


def _logging(ds):
    P0 = getattr(ds, "propensities", None)
    if P0 is None:
        raise ValueError("dataset carries no logging propensity vectors")
    return floor_propensities(P0)


def bias_term_B(alpha, ds, target, return_grad=False):
    """``1 - (1/n) sum_i sum_a pi_Q(a|x_i) pi0(a|x_i)^(1-alpha)``."""
    alpha = check_scalar_in(alpha, "alpha", 0.0, 1.0)
    P = _targets(ds, target)
    n = ds.n
    if alpha == 1.0:
        val = 1.0 - float(np.sum(P)) / n
        return (val, np.full(P.shape, -1.0 / n)) if return_grad else val
    C = _logging(ds) ** (1.0 - alpha)
    val = 1.0 - float(np.sum(P * C)) / n
    return (val, -C / n) if return_grad else val


def second_moment_term_V(alpha, ds, target, return_grad=False):
    """Empirical second-moment term ``V`` of the two-sided bound.

    ``alpha`` may exceed 1 (used with ``2 alpha`` by the any-alpha bound).
    """
    alpha = check_scalar_in(alpha, "alpha", 0.0)
    P = _targets(ds, target)
    P0 = _logging(ds)
    n = ds.n
    rows = np.arange(n)
    C = P0 ** (1.0 - 2.0 * alpha)
    logged = ds.costs ** 2 / P0[rows, ds.actions] ** (2.0 * alpha)
    val = (float(np.sum(P * C)) + float(np.sum(P[rows, ds.actions] * logged))) / n
    if not return_grad:
        return val
    G = C.copy()
    G[rows, ds.actions] += logged
    return val, G / n


def lambda_star(kl2, n, second_moment):
    """``sqrt(2 KL2 / (n V))``, the minimizer of ``KL2/(n lam) + lam V / 2``."""
    if not second_moment > 0:
        raise ValueError("second moment must be positive for lambda*")
    if not kl2 > 0 or n < 1:
        raise ValueError("lambda* needs kl2 > 0 and n >= 1")
    return math.sqrt(2.0 * kl2 / (n * second_moment))


def _kl12(kl, n, delta):
    return kl + math.log(4.0 * math.sqrt(n) / delta), kl + math.log(4.0 / delta)


def _pick_lambda(cfg, kl, n, V):
    """Return ``(lam, kl1, kl2)`` according to the lambda mode."""
    if cfg.lambda_mode == "grid":
        delta = cfg.delta / len(cfg.lambda_grid)
        kl1, kl2 = _kl12(kl, n, delta)
        grid = np.asarray(cfg.lambda_grid)
        vals = kl2 / (n * grid) + 0.5 * grid * V
        return float(grid[int(np.argmin(vals))]), kl1, kl2
    kl1, kl2 = _kl12(kl, n, cfg.delta)
    if cfg.lambda_mode == "fixed":
        return float(cfg.lam), kl1, kl2
    return lambda_star(kl2, n, V), kl1, kl2


def compute_terms(ds, target, kl, cfg: BoundConfig) -> BoundTerms:
    """All terms of the two-sided bound at ``cfg.alpha``."""
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    n = int(cfg.n or ds.n)
    B = bias_term_B(cfg.alpha, ds, target)
    V = second_moment_term_V(cfg.alpha, ds, target)
    lam, kl1, kl2 = _pick_lambda(cfg, kl, n, V)
    return BoundTerms(float(kl), kl1, kl2, B, V, lam, cfg.alpha, n, cfg.delta)


def main_bound(estimate: RiskEstimate, terms: BoundTerms, cfg: BoundConfig):
    """``R_hat + sqrt(KL1/2n) + B + KL2/(n lam) + lam V / 2``.

    Raises
    ------
    ValueError
        If the estimate, the terms and the config disagree on ``alpha``.
    """
    spec = estimate.spec
    est_alpha = spec.hyper if spec.variant is Variant.IPS_ALPHA else (1.0 if spec.variant is Variant.IPS else None)
    if est_alpha is None or not math.isclose(est_alpha, terms.alpha, rel_tol=0, abs_tol=1e-15):
        raise ValueError("estimate and bound terms use different alpha")
    if not math.isclose(terms.alpha, cfg.alpha, rel_tol=0, abs_tol=1e-15):
        raise ValueError("bound terms and config use different alpha")
    return estimate.value + terms.penalty


def adaptive_alpha_objective(ds, target, kl2, n=None, grid_size=101):
    """Grid of ``alpha`` and the values of ``B + sqrt(2 KL2 V / n)``."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    P = _targets(ds, target)
    P0 = _logging(ds)
    n = int(n or ds.n)
    rows = np.arange(ds.n)
    grid = np.linspace(0.0, 1.0, grid_size)
    logP0 = np.log(P0)
    c2 = ds.costs ** 2
    p_log = P[rows, ds.actions]
    lp_log = logP0[rows, ds.actions]
    vals = np.empty(grid_size)
    for j, a in enumerate(grid):
        B = 1.0 - float(np.sum(P * np.exp((1.0 - a) * logP0))) / ds.n
        V = (float(np.sum(P * np.exp((1.0 - 2.0 * a) * logP0))) + float(np.sum(p_log * c2 * np.exp(-2.0 * a * lp_log)))) / ds.n
        vals[j] = B + math.sqrt(2.0 * kl2 * V / n)
    return grid, vals


def adaptive_alpha(ds, target, kl2, n=None, grid_size=101):
    """Grid minimizer of ``B^alpha + sqrt(2 KL2 V^alpha / n)``; lowest index wins ties."""
    grid, vals = adaptive_alpha_objective(ds, target, kl2, n, grid_size)
    return float(grid[int(np.argmin(vals))])


def bound_any_lambda(estimate_value, kl, B, V, n, delta, lam):
    """Two-sided bound valid simultaneously for every ``lam`` in (0, 1)."""
    check_scalar_in(lam, "lambda", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
    kl1 = kl + math.log(8.0 * math.sqrt(n) / (delta * lam))
    kl2 = 2.0 * (kl + math.log(8.0 / (delta * lam)))
    return estimate_value + math.sqrt(kl1 / (2.0 * n)) + B + kl2 / (n * lam) + 0.5 * lam * V


def bound_any_alpha(estimate_value, kl, B, V_2alpha, n, delta, lam, alpha):
    """One-sided upper bound on ``R`` valid simultaneously for ``alpha`` in (0, 1].

    ``V_2alpha`` is the second-moment term evaluated at ``2 alpha``.
    """
    check_scalar_in(alpha, "alpha", 0.0, 1.0, low_inclusive=False)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    kl1 = kl + math.log(8.0 * math.sqrt(n) / (delta * alpha))
    kl2 = kl + math.log(8.0 / (delta * alpha))
    return estimate_value + math.sqrt(kl1 / (2.0 * n)) + B + kl2 / (n * lam) + 0.5 * lam * V_2alpha


def oracle_inequality_rhs(mu_star_dist, K, n, alpha, delta):
    """Excess risk of the learned policy over ``pi_{Q*}`` under uniform logging.

    ``mu_star_dist`` is ``||mu* - mu0||`` (not squared).
    """
    check_scalar_in(alpha, "alpha", 0.0, 1.0)
    if K < 2:
        raise ValueError("K must be >= 2")
    d2 = float(mu_star_dist) ** 2
    rn = math.sqrt(n)
    return (
        math.sqrt(d2 + 2.0 * math.log(4.0 * rn / delta)) / rn
        + 2.0 * (1.0 - K ** (alpha - 1.0))
        + (d2 + 2.0 * math.log(4.0 / delta)) / rn
        + (K ** (2.0 * alpha - 1.0) + K ** (2.0 * alpha)) / rn
    )


def prop51_bound(estimate, kl, lam, empirical_sq_term, population_sq_term, n, delta):
    """Estimate plus the bound on ``|R^alpha - R_hat^alpha|`` with a population term.

    ``empirical_sq_term`` is ``(1/n) sum_i pi_Q(a_i|x_i) c_i^2 / pi0(a_i|x_i)^(2 alpha)``
    and ``population_sq_term`` its expectation, which only an oracle knows.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    value = getattr(estimate, "value", estimate)
    return float(value) + (kl + math.log(2.0 / delta)) / (lam * n) + 0.5 * lam * empirical_sq_term + 0.5 * lam * population_sq_term


def london_bound(estimate_tau, kl, tau, n, delta):
    """Upper bound on ``R`` built on the max-clipped estimate."""
    check_scalar_in(tau, "tau", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
    if n < 2:
        raise ValueError("n must be >= 2")
    r = float(getattr(estimate_tau, "value", estimate_tau))
    arg = r + 1.0 / tau
    if arg < -1e-12:
        raise ValueError("estimate is below -1/tau; sqrt argument is negative")
    c = (kl + math.log(n / delta)) / (tau * (n - 1))
    return r + math.sqrt(2.0 * max(arg, 0.0) * c) + 2.0 * c


def sakhi1_bound(estimate_tau, kl, tau, n, delta, lam, return_flag=False):
    """``(1 - exp(-tau lam R - (KL + log(2 sqrt(n)/delta))/n)) / (tau (e^lam - 1))``.

    This is Catoni's bound applied to the loss ``1 + tau c`` in [0, 1]; the
    complexity term enters the exponent with a negative sign so that the
    bound loosens as the KL grows.

    ``lam`` above ``SAKHI1_LAMBDA_MAX`` is clamped and a
    :class:`LambdaClampWarning` is issued; with ``return_flag=True`` the
    function returns ``(total, clamped)``.
    """
    check_scalar_in(tau, "tau", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    clamped = lam > SAKHI1_LAMBDA_MAX
    if clamped:
        warnings.warn(f"lambda={lam} clamped to {SAKHI1_LAMBDA_MAX}", LambdaClampWarning, stacklevel=2)
        lam = SAKHI1_LAMBDA_MAX
    r = float(getattr(estimate_tau, "value", estimate_tau))
    expo = -tau * lam * r - (kl + math.log(2.0 * math.sqrt(n) / delta)) / n
    total = -math.expm1(expo) / (tau * math.expm1(lam))
    return (total, clamped) if return_flag else total


def g(u):
    """``(exp(u) - 1 - u) / u^2`` with a series branch for ``|u| < 1e-4``."""
    u = float(u)
    if abs(u) < 1e-4:
        return 0.5 + u / 6.0 + u * u / 24.0
    return (math.expm1(u) - u) / (u * u)


def _g_prime(u):
    if abs(u) < 1e-4:
        return 1.0 / 6.0 + u / 12.0
    return (u * math.expm1(u) - 2.0 * (math.expm1(u) - u)) / u ** 3


def sakhi2_lambda_grid(n):
    """``{sqrt(n) 2^k : k = -5..4}``."""
    return tuple(math.sqrt(n) * 2.0 ** k for k in range(-5, 5))


def sakhi_V_tau(ds, target, tau, return_grad=False):
    """``(1/n) sum_i sum_a pi_Q(a|x_i) pi0 / max(tau, pi0)^2``."""
    P = _targets(ds, target)
    P0 = np.asarray(ds.propensities, dtype=np.float64)
    C = P0 / np.maximum(tau, floor_propensities(P0)) ** 2
    val = float(np.sum(P * C)) / ds.n
    return (val, C / ds.n) if return_grad else val


def _sakhi2_parts(r, kl, tau, n, delta, grid, V):
    n_lam = len(grid)
    lams = np.asarray(grid, dtype=float)
    gs = np.array([g(l / (tau * n)) for l in lams])
    vals = (kl + math.log(2.0 * n_lam / delta)) / lams + lams / n * gs * V
    j = int(np.argmin(vals))
    head = r + math.sqrt((kl + math.log(4.0 * math.sqrt(n) / delta)) / (2.0 * n))
    return head + float(vals[j]), j, lams[j], gs[j]


def sakhi2_bound(estimate_tau, kl, tau, n, delta, lambda_grid=None, V_tau=None):
    """Minimum over the grid of the Bernstein-type bound on ``R``."""
    check_scalar_in(tau, "tau", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
    if V_tau is None:
        raise ValueError("V_tau is required")
    grid = sakhi2_lambda_grid(n) if lambda_grid is None else tuple(lambda_grid)
    if len(grid) == 0:
        raise ValueError("lambda grid must be nonempty")
    r = float(getattr(estimate_tau, "value", estimate_tau))
    return _sakhi2_parts(r, kl, tau, n, delta, grid, V_tau)[0]


def learning_principle_objective(estimate_alpha, mu, mu0, B, V, lambdas=(1e-5, 1e-5, 1e-5)):
    """``R_hat + l1 ||mu - mu0||^2 + l2 V + l3 B``."""
    l1, l2, l3 = lambdas
    if min(l1, l2, l3) < 0:
        raise ValueError("lambdas must be nonnegative")
    r = float(getattr(estimate_alpha, "value", estimate_alpha))
    diff = np.asarray(mu, dtype=float) - np.asarray(mu0, dtype=float)
    return r + l1 * float(np.sum(diff * diff)) + l2 * V + l3 * B


def bound_report(objective_name, total, estimate, kl=None, lam=None, B=None, V=None, alpha=None, tau=None, delta=None):
    """JSON record of a bound evaluation."""
    rec = {
        "objective_name": objective_name,
        "alpha": alpha,
        "tau": tau,
        "lambda": lam,
        "kl": kl,
        "B": B,
        "V": V,
        "estimate": float(getattr(estimate, "value", estimate)),
        "total": float(total),
        "delta": delta,
    }
    return json.dumps(rec, sort_keys=True)


# ----------------------------------------------------------------------------
# Training objectives with derivatives


def _n_const(ds, n_total):
    return int(n_total or ds.n)


def _estimate_with_grad(ds, P, spec):
    rows = np.arange(ds.n)
    p = P[rows, ds.actions]
    p0 = ds.propensities[rows, ds.actions]
    per = ds.costs * spec.transform(p, p0)
    G = np.zeros_like(P)
    G[rows, ds.actions] = ds.costs * spec.derivative(p, p0) / ds.n
    return float(np.mean(per)), G


def objective_estimate(ds, P, spec: EstimatorSpec, **_):
    """Plain risk estimate."""
    r, G = _estimate_with_grad(ds, P, spec)
    return ObjectiveValue(r, G, terms={"estimate": r}, parts=("estimate",))


def objective_ours(ds, P, kl, cfg: BoundConfig, spec: Optional[EstimatorSpec] = None, n_total=None):
    """Smoothed estimate plus the two-sided bound at ``cfg.alpha``.

    With ``lambda_mode="star"`` the closed form at ``lambda*`` is
    differentiated, i.e. ``sqrt(KL1/2n) + B + sqrt(2 KL2 V / n)``.
    """
    n = _n_const(ds, n_total)
    alpha = cfg.alpha
    spec = EstimatorSpec.ips_alpha(alpha) if spec is None else spec
    r, G = _estimate_with_grad(ds, P, spec)
    B, gB = bias_term_B(alpha, ds, P, return_grad=True)
    V, gV = second_moment_term_V(alpha, ds, P, return_grad=True)
    lam, kl1, kl2 = _pick_lambda(cfg, kl, n, V)
    head = math.sqrt(kl1 / (2.0 * n))
    d_head = 1.0 / (4.0 * n * head)
    if cfg.lambda_mode == "star":
        tail = math.sqrt(2.0 * kl2 * V / n)
        kl_part, v_part = 0.5 * tail, 0.5 * tail
        grad_P = G + gB + (tail / (2.0 * V)) * gV
        grad_kl = d_head + tail / (2.0 * kl2)
    else:
        kl_part, v_part = kl2 / (n * lam), 0.5 * lam * V
        grad_P = G + gB + 0.5 * lam * gV
        grad_kl = d_head + 1.0 / (n * lam)
    terms = {
        "estimate": r,
        "sqrt_kl1": head,
        "bias": B,
        "kl2_term": kl_part,
        "variance_term": v_part,
        "kl": kl,
        "kl1": kl1,
        "kl2": kl2,
        "B": B,
        "V": V,
        "lambda": lam,
        "alpha": alpha,
    }
    total = r + head + B + kl_part + v_part
    return ObjectiveValue(total, grad_P, grad_kl, terms=terms, parts=("estimate", "sqrt_kl1", "bias", "kl2_term", "variance_term"))


def objective_london(ds, P, kl, tau, delta, n_total=None):
    n = _n_const(ds, n_total)
    r, G = _estimate_with_grad(ds, P, EstimatorSpec.ips_max(tau))
    c = (kl + math.log(n / delta)) / (tau * (n - 1))
    arg = max(r + 1.0 / tau, 1e-300)
    root = math.sqrt(2.0 * arg * c)
    total = r + root + 2.0 * c
    d_r = 1.0 + c / root
    d_c = arg / root + 2.0
    terms = {"estimate": r, "sqrt_term": root, "linear_term": 2.0 * c, "kl": kl, "tau": tau}
    return ObjectiveValue(total, d_r * G, d_c / (tau * (n - 1)), terms=terms, parts=("estimate", "sqrt_term", "linear_term"))


def objective_sakhi1(ds, P, kl, tau, delta, log_lambda, n_total=None):
    """Exponential bound with ``lambda = exp(log_lambda)`` (clamped at 30)."""
    n = _n_const(ds, n_total)
    r, G = _estimate_with_grad(ds, P, EstimatorSpec.ips_max(tau))
    lam = math.exp(log_lambda)
    clamped = lam > SAKHI1_LAMBDA_MAX
    if clamped:
        lam = SAKHI1_LAMBDA_MAX
    expo = -tau * lam * r - (kl + math.log(2.0 * math.sqrt(n) / delta)) / n
    den = tau * math.expm1(lam)
    total = -math.expm1(expo) / den
    d_expo = -math.exp(expo) / den
    d_lam_direct = math.expm1(expo) * tau * math.exp(lam) / den ** 2
    d_lam = d_lam_direct + d_expo * (-tau * r)
    terms = {"estimate": r, "bound": total, "lambda": lam, "kl": kl, "tau": tau, "lambda_clamped": clamped}
    return ObjectiveValue(
        total,
        d_expo * (-tau * lam) * G,
        -d_expo / n,
        terms=terms,
        parts=("bound",),
        grad_extra={"log_lambda": 0.0 if clamped else d_lam * lam},
    )


def objective_sakhi2(ds, P, kl, tau, delta, lambda_grid=None, n_total=None):
    n = _n_const(ds, n_total)
    grid = sakhi2_lambda_grid(n) if lambda_grid is None else tuple(lambda_grid)
    r, G = _estimate_with_grad(ds, P, EstimatorSpec.ips_max(tau))
    V, gV = sakhi_V_tau(ds, P, tau, return_grad=True)
    total, j, lam, gval = _sakhi2_parts(r, kl, tau, n, delta, grid, V)
    head_arg = kl + math.log(4.0 * math.sqrt(n) / delta)
    head = math.sqrt(head_arg / (2.0 * n))
    kl_term = (kl + math.log(2.0 * len(grid) / delta)) / lam
    v_term = lam / n * gval * V
    grad_P = G + (lam / n * gval) * gV
    grad_kl = 1.0 / (4.0 * n * head) + 1.0 / lam
    terms = {"estimate": r, "sqrt_term": head, "kl_term": kl_term, "variance_term": v_term, "lambda": lam, "V_tau": V, "kl": kl, "tau": tau}
    return ObjectiveValue(total, grad_P, grad_kl, terms=terms, parts=("estimate", "sqrt_term", "kl_term", "variance_term"))


def objective_learning_principle(ds, P, dist2, alpha, lambdas=(1e-5, 1e-5, 1e-5), spec=None):
    """``R_hat^alpha + l1 ||mu - mu0||^2 + l2 V + l3 B``; ``dist2`` is ``||mu - mu0||^2``."""
    l1, l2, l3 = lambdas
    spec = EstimatorSpec.ips_alpha(alpha) if spec is None else spec
    r, G = _estimate_with_grad(ds, P, spec)
    B, gB = bias_term_B(alpha, ds, P, return_grad=True)
    V, gV = second_moment_term_V(alpha, ds, P, return_grad=True)
    terms = {"estimate": r, "l2_term": l1 * dist2, "variance_term": l2 * V, "bias_term": l3 * B, "B": B, "V": V, "alpha": alpha}
    total = r + l1 * dist2 + l2 * V + l3 * B
    return ObjectiveValue(total, G + l2 * gV + l3 * gB, 0.0, grad_dist2=l1, terms=terms, parts=("estimate", "l2_term", "variance_term", "bias_term"))
