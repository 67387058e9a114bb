"""Exact ground truth on small enumerable bandit problems.

A problem has finitely many contexts with known probabilities and a known
expected-cost table, so risks, estimator means and variances can be computed
by full enumeration and bounds can be checked by simulation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from ._validation import check_probability_matrix, floor_propensities
from .bounds import (
    BoundConfig,
    bound_any_alpha,
    bound_any_lambda,
    compute_terms,
    lambda_star,
    second_moment_term_V,
)
from .data import LoggedDataset, normalize_rows
from .estimators import EstimatorSpec, estimate_risk

__all__ = [
    "ENUMERATION_BUDGET",
    "COVERAGE_BOUNDS",
    "EnumerableProblem",
    "random_problem",
    "random_policy",
    "fig1_problem",
    "exact_risk",
    "exact_bias_variance",
    "exact_second_moment_terms",
    "sample_logged_dataset",
    "gaussian_propensities_quadrature",
    "coverage_experiment",
]

ENUMERATION_BUDGET = 10_000
COVERAGE_BOUNDS = ("main", "any_lambda", "any_alpha", "prop51", "broken")


@dataclass(frozen=True)
class EnumerableProblem:
    """Finite context distribution with an expected-cost table.

    Attributes
    ----------
    features : (m, d) context features
    context_probs : (m,) probabilities ``nu(x)``
    cost_table : (m, K) expected costs in ``[-1, 0]``
    cost_noise : {"deterministic", "bernoulli"}
        With ``bernoulli`` the realized cost is ``-1`` with probability
        ``-cost_table[x, a]`` and ``0`` otherwise.
    logging : (m, K), optional
        Logging propensities, for functions that accept a problem in place
        of an explicit logging table.
    """

    features: np.ndarray
    context_probs: np.ndarray
    cost_table: np.ndarray
    cost_noise: str = "deterministic"
    logging: Optional[np.ndarray] = None

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        nu = np.asarray(self.context_probs, dtype=np.float64)
        C = np.atleast_2d(np.asarray(self.cost_table, dtype=np.float64))
        if nu.shape != (F.shape[0],) or C.shape[0] != F.shape[0]:
            raise ValueError("features, context_probs and cost_table disagree on the number of contexts")
        if np.any(nu < 0) or not math.isclose(float(nu.sum()), 1.0, abs_tol=1e-9):
            raise ValueError("context probabilities must be nonnegative and sum to 1")
        if np.any(C < -1) or np.any(C > 0):
            raise ValueError("cost_table entries must lie in [-1, 0]")
        if self.cost_noise not in ("deterministic", "bernoulli"):
            raise ValueError("cost_noise must be 'deterministic' or 'bernoulli'")
        object.__setattr__(self, "features", F)
        object.__setattr__(self, "context_probs", nu)
        object.__setattr__(self, "cost_table", C)
        if self.logging is not None:
            object.__setattr__(self, "logging", check_probability_matrix(self.logging, F.shape[0], C.shape[1], "logging", 1e-9))

    @property
    def m(self):
        return self.features.shape[0]

    @property
    def K(self):
        return self.cost_table.shape[1]

    def cost_outcomes(self):
        """List of ``(cost_value_table, probability_table)`` pairs."""
        C = self.cost_table
        if self.cost_noise == "deterministic":
            return [(C, np.ones_like(C))]
        return [(np.full_like(C, -1.0), -C), (np.zeros_like(C), 1.0 + C)]


def random_policy(rng, m, K, concentration=1.0):
    """Dirichlet-distributed propensity table (m, K)."""
    P = rng.dirichlet(np.full(K, concentration), size=m)
    return P / P.sum(axis=1, keepdims=True)


def random_problem(rng, m=None, K=None, d=3, cost_noise=None):
    """Random problem with ``m`` in [1, 10] contexts and ``K`` in [2, 20] actions.

    The returned problem carries a Dirichlet logging table.
    """
    m = int(rng.integers(1, 11)) if m is None else m
    K = int(rng.integers(2, 21)) if K is None else K
    if cost_noise is None:
        cost_noise = "deterministic" if rng.random() < 0.5 else "bernoulli"
    features = normalize_rows(rng.standard_normal((m, d)))
    nu = rng.dirichlet(np.ones(m))
    costs = -rng.random((m, K))
    return EnumerableProblem(features, nu / nu.sum(), costs, cost_noise, random_policy(rng, m, K))


def fig1_problem(spec):
    """Single-context problem matching a :class:`~smoothopl.data.Fig1Spec`."""
    return EnumerableProblem(
        np.ones((1, 1)), np.ones(1), -spec.rewards()[None, :], "bernoulli", spec.logging_propensities()[None, :]
    )


def _table(problem, P, name):
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.shape != (problem.m, problem.K):
        raise ValueError(f"{name} must have shape {(problem.m, problem.K)}")
    return P


def exact_risk(problem, target):
    """``sum_x nu(x) sum_a pi(a|x) c(x, a)``."""
    P = _table(problem, target, "target")
    return float(problem.context_probs @ np.sum(P * problem.cost_table, axis=1))


def exact_bias_variance(problem, logging, target, spec: EstimatorSpec, n=1):
    """Exact bias and variance of ``spec`` at sample size ``n``.

    The single-sample weighted cost is enumerated over contexts, logged
    actions and realized cost outcomes.

    Returns
    -------
    bias : float
        ``E[R_hat] - R``.
    variance : float
        ``(E[Y^2] - E[Y]^2) / n`` for the single-sample term ``Y``.
    """
    if problem.m * problem.K > ENUMERATION_BUDGET:
        raise ValueError(f"{problem.m * problem.K} cells exceed the enumeration budget {ENUMERATION_BUDGET}")
    if n < 1:
        raise ValueError("n must be >= 1")
    P0 = _table(problem, logging, "logging")
    P = _table(problem, target, "target")
    T = spec.transform(P, P0)
    cell = problem.context_probs[:, None] * P0
    mean = 0.0
    second = 0.0
    for cvals, cprob in problem.cost_outcomes():
        w = cell * cprob
        y = cvals * T
        mean += float(np.sum(w * y))
        second += float(np.sum(w * y * y))
    bias = mean - exact_risk(problem, P)
    return bias, max(second - mean * mean, 0.0) / n


def exact_second_moment_terms(problem, logging, target, alpha):
    """Population means of the data-dependent terms.

    Returns ``(E[V], E[pi_Q(a|x) c^2 / pi0(a|x)^(2 alpha)], E[R_hat^alpha])``
    under ``x ~ nu``, ``a ~ pi0``.
    """
    P0 = _table(problem, logging, "logging")
    P0f = floor_propensities(P0)
    P = _table(problem, target, "target")
    nu = problem.context_probs
    c2 = sum(cv * cv * cp for cv, cp in problem.cost_outcomes())
    first = float(nu @ np.sum(P * P0f ** (1.0 - 2.0 * alpha), axis=1))
    sq = float(nu @ np.sum(P0 * P * c2 / P0f ** (2.0 * alpha), axis=1))
    r_alpha = float(nu @ np.sum(P0 * P * problem.cost_table / P0f ** alpha, axis=1))
    return first + sq, sq, r_alpha


def sample_logged_dataset(problem, logging, n, rng):
    """Draw ``n`` logged rounds ``x ~ nu``, ``a ~ pi0(.|x)``, ``c``.

    Returns
    -------
    ds : LoggedDataset
    contexts : ndarray (n,) context index of each round
    """
    P0 = _table(problem, logging, "logging")
    x = rng.choice(problem.m, size=n, p=problem.context_probs)
    cdf = np.cumsum(P0[x], axis=1)
    cdf[:, -1] = 1.0
    a = (rng.random(n)[:, None] >= cdf).sum(axis=1)
    zero = P0[x, a] <= 0
    if np.any(zero):
        a[zero] = P0[x[zero]].argmax(axis=1)
    mean_cost = problem.cost_table[x, a]
    if problem.cost_noise == "bernoulli":
        c = -(rng.random(n) < -mean_cost).astype(np.float64)
    else:
        c = mean_cost.copy()
    P0x = P0[x] / P0[x].sum(axis=1, keepdims=True)
    return LoggedDataset(problem.features[x], a, c, P0x), x


def gaussian_propensities_quadrature(params, X, n_nodes=80):
    """Gaussian-policy propensities by Gauss-Hermite quadrature.

    ``P(a|x) = E_e[prod_{b != a} Phi(e + x^T (mu_a - mu_b) / (sigma ||x||))]``;
    an independent route to the Monte Carlo estimator.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    e = math.sqrt(2.0) * nodes
    w = weights / math.sqrt(math.pi)
    s = X @ params.mu.T / (params.sigma * np.linalg.norm(X, axis=1, keepdims=True))
    diff = s[:, :, None] - s[:, None, :]
    out = np.zeros(s.shape)
    K = s.shape[1]
    off = ~np.eye(K, dtype=bool)
    for ej, wj in zip(e, w):
        Phi = ndtr(ej + diff)
        out += wj * np.prod(np.where(off[None], Phi, 1.0), axis=2)
    return out


def coverage_experiment(
    problem,
    logging,
    target,
    bound_name,
    alpha,
    delta,
    n,
    replicates,
    seed,
    kl=0.0,
    return_details=False,
):
    """Fraction of simulated datasets on which a bound holds.

    Parameters
    ----------
    bound_name : one of ``COVERAGE_BOUNDS``
        ``main``: two-sided bound at a data-independent ``lambda`` (the
        minimizer for the population second moment), checked against
        ``|R - R_hat^alpha|``. ``any_lambda``: the bound uniform in
        ``lambda`` at the empirical ``lambda*`` (clipped into (0, 1)).
        ``any_alpha``: one-sided ``R - R_hat^alpha``. ``prop51``: checked
        against ``|R^alpha - R_hat^alpha|`` with the oracle's population
        term. ``broken``: ``main`` with every term halved (negative control).
    kl : float
        KL upper bound of the fixed posterior.
    """
    if bound_name not in COVERAGE_BOUNDS:
        raise ValueError(f"unknown bound {bound_name!r}; choose from {COVERAGE_BOUNDS}")
    if replicates < 100:
        raise ValueError("replicates must be >= 100")
    P0 = _table(problem, logging, "logging")
    Pt = _table(problem, target, "target")
    R = exact_risk(problem, Pt)
    EV, Esq, R_alpha = exact_second_moment_terms(problem, P0, Pt, alpha)
    spec = EstimatorSpec.ips_alpha(alpha)
    kl2_pop = kl + math.log(4.0 / delta)
    lam_pop = lambda_star(kl2_pop, n, EV)
    lam51 = math.sqrt((kl + math.log(2.0 / delta)) / (n * Esq)) if Esq > 0 else 1.0
    covered = np.zeros(replicates, dtype=bool)
    gaps = np.zeros(replicates)
    radii = np.zeros(replicates)
    for r in range(replicates):
        rng = np.random.default_rng([seed, r])
        ds, x = sample_logged_dataset(problem, P0, n, rng)
        P = Pt[x]
        est = estimate_risk(spec, ds, P).value
        if bound_name in ("main", "broken"):
            cfg = BoundConfig(delta=delta, alpha=alpha, lambda_mode="fixed", lam=lam_pop)
            radius = compute_terms(ds, P, kl, cfg).penalty
            if bound_name == "broken":
                radius *= 0.5
            gap = abs(R - est)
        elif bound_name == "any_lambda":
            terms = compute_terms(ds, P, kl, BoundConfig(delta=delta, alpha=alpha))
            lam = min(max(terms.lam, 1e-12), 1.0 - 1e-12)
            radius = bound_any_lambda(0.0, kl, terms.bias_term, terms.second_moment, n, delta, lam)
            gap = abs(R - est)
        elif bound_name == "any_alpha":
            terms = compute_terms(ds, P, kl, BoundConfig(delta=delta, alpha=alpha))
            V2 = second_moment_term_V(2.0 * alpha, ds, P)
            radius = bound_any_alpha(0.0, kl, terms.bias_term, V2, n, delta, lam_pop, alpha)
            gap = R - est
        else:
            rows = np.arange(n)
            emp = float(np.mean(P[rows, ds.actions] * ds.costs ** 2 / floor_propensities(ds.logged_propensities) ** (2 * alpha)))
            radius = (kl + math.log(2.0 / delta)) / (lam51 * n) + 0.5 * lam51 * (emp + Esq)
            gap = abs(R_alpha - est)
        covered[r] = gap <= radius
        gaps[r] = gap
        radii[r] = radius
    frac = float(covered.mean())
    if return_details:
        return frac, {"gaps": gaps, "radii": radii, "risk": R, "risk_alpha": R_alpha}
    return frac
