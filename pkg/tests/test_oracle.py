import numpy as np
import pytest

from smoothopl.data import Fig1Spec
from smoothopl.estimators import (
    EstimatorSpec,
    bias_bound_alpha,
    bias_bound_beta,
    estimate_risk,
    variance_bound_alpha,
    variance_bound_beta,
)
from smoothopl.oracle import (
    ENUMERATION_BUDGET,
    EnumerableProblem,
    coverage_experiment,
    exact_bias_variance,
    exact_risk,
    fig1_problem,
    random_policy,
    random_problem,
    sample_logged_dataset,
)


def test_exact_risk_examples():
    prob = EnumerableProblem(np.ones((2, 1)), [0.5, 0.5], -np.ones((2, 3)))
    assert exact_risk(prob, np.full((2, 3), 1 / 3)) == pytest.approx(-1.0, abs=1e-15)
    fig = fig1_problem(Fig1Spec())
    dirac = np.zeros((1, 100))
    dirac[0, 0] = 1.0
    assert exact_risk(fig, dirac) == pytest.approx(-0.1, abs=1e-15)
    single = EnumerableProblem(np.ones((1, 1)), [1.0], [[-1.0, 0.0]])
    assert exact_risk(single, [[0.8, 0.2]]) == pytest.approx(-0.8)


def test_ips_unbiased_when_absolutely_continuous():
    rng = np.random.default_rng(0)
    for _ in range(50):
        prob = random_problem(rng)
        P = random_policy(rng, prob.m, prob.K)
        bias, _ = exact_bias_variance(prob, prob.logging, P, EstimatorSpec.ips())
        assert abs(bias) <= 1e-12


def test_alpha_bias_examples():
    rng = np.random.default_rng(1)
    prob = random_problem(rng, cost_noise="bernoulli")
    P = random_policy(rng, prob.m, prob.K)
    b1, _ = exact_bias_variance(prob, prob.logging, P, EstimatorSpec.ips_alpha(1.0))
    assert abs(b1) <= 1e-12
    b, _ = exact_bias_variance(prob, prob.logging, P, EstimatorSpec.ips_alpha(0.5))
    assert abs(b) <= bias_bound_alpha(0.5, prob, P)


def test_fig1_clipped_expectation():
    spec = Fig1Spec()
    prob = fig1_problem(spec)
    for a in (0, 10, 99):
        dirac = np.zeros((1, 100))
        dirac[0, a] = 1.0
        bias, _ = exact_bias_variance(prob, prob.logging, dirac, EstimatorSpec.ips_min(100))
        expected_reward = -(exact_risk(prob, dirac) + bias)
        assert expected_reward == pytest.approx(100 * (0.05 / 99) * spec.rewards()[a], rel=1e-12)
    dirac = np.zeros((1, 100))
    dirac[0, 0] = 1.0
    bias, _ = exact_bias_variance(prob, prob.logging, dirac, EstimatorSpec.ips_min(100))
    assert -(exact_risk(prob, dirac) + bias) == pytest.approx(0.0050505, abs=1e-7)


def test_bias_variance_bounds_hold():
    rng = np.random.default_rng(2)
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    for _ in range(200):
        prob = random_problem(rng)
        P = random_policy(rng, prob.m, prob.K)
        n = int(rng.integers(1, 100))
        for a in grid:
            b, v = exact_bias_variance(prob, prob.logging, P, EstimatorSpec.ips_alpha(a), n)
            assert abs(b) <= bias_bound_alpha(a, prob, P) + 1e-12
            assert v <= variance_bound_alpha(a, prob, P, n) + 1e-12
            b, v = exact_bias_variance(prob, prob.logging, P, EstimatorSpec.ips_beta(a), n)
            assert abs(b) <= bias_bound_beta(a, prob, P) + 1e-12
            assert v <= variance_bound_beta(a, prob, P, n) + 1e-12


def test_monte_carlo_mean_matches_exact():
    rng = np.random.default_rng(3)
    prob = random_problem(rng, m=4, K=5, cost_noise="bernoulli")
    P = random_policy(rng, 4, 5)
    spec = EstimatorSpec.ips_alpha(0.7)
    bias, var = exact_bias_variance(prob, prob.logging, P, spec, n=200)
    mean = exact_risk(prob, P) + bias
    vals = []
    for r in range(400):
        ds, x = sample_logged_dataset(prob, prob.logging, 200, np.random.default_rng([3, r]))
        vals.append(estimate_risk(spec, ds, P[x]).value)
    se = np.sqrt(var / 400)
    assert abs(np.mean(vals) - mean) <= 4 * se


def test_enumeration_budget():
    m, K = 200, 60
    assert m * K > ENUMERATION_BUDGET
    prob = EnumerableProblem(np.ones((m, 1)), np.full(m, 1 / m), -np.ones((m, K)), logging=np.full((m, K), 1 / K))
    with pytest.raises(ValueError, match="budget"):
        exact_bias_variance(prob, prob.logging, prob.logging, EstimatorSpec.ips())


def _control_problem():
    K = 5
    prob = EnumerableProblem(np.eye(K), np.full(K, 1 / K), -np.ones((K, K)))
    P0 = random_policy(np.random.default_rng(4), K, K, concentration=0.5)
    T = np.full((K, K), 0.02)
    T[np.arange(K), P0.argmin(axis=1)] += 1 - 0.02 * K
    return prob, P0, T


def test_coverage_main_and_deterministic():
    prob, P0, T = _control_problem()
    a = coverage_experiment(prob, P0, T, "main", 0.7, 0.05, 500, 100, seed=0)
    b = coverage_experiment(prob, P0, T, "main", 0.7, 0.05, 500, 100, seed=0)
    assert a == b
    assert a >= 0.95


def test_coverage_broken_control_lower():
    prob, P0, T = _control_problem()
    intact = coverage_experiment(prob, P0, T, "main", 0.7, 0.05, 500, 100, seed=1)
    broken = coverage_experiment(prob, P0, T, "broken", 0.7, 0.05, 500, 100, seed=1)
    assert broken < intact - 0.1


@pytest.mark.parametrize("name", ["any_lambda", "any_alpha", "prop51"])
def test_coverage_other_bounds(name):
    rng = np.random.default_rng(5)
    prob = random_problem(rng, m=5, K=5, cost_noise="bernoulli")
    P = random_policy(rng, 5, 5)
    assert coverage_experiment(prob, prob.logging, P, name, 0.8, 0.05, 300, 100, seed=2) >= 0.95


def test_coverage_rejects_unknown_bound():
    prob, P0, T = _control_problem()
    with pytest.raises(ValueError):
        coverage_experiment(prob, P0, T, "nope", 0.7, 0.05, 100, 100, seed=0)
