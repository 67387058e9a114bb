import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothopl.bounds import (
    BoundConfig,
    LambdaClampWarning,
    adaptive_alpha,
    adaptive_alpha_objective,
    bias_term_B,
    bound_any_alpha,
    bound_any_lambda,
    bound_report,
    compute_terms,
    g,
    kl_gaussian_exact,
    kl_gaussian_upper,
    lambda_star,
    learning_principle_objective,
    london_bound,
    main_bound,
    oracle_inequality_rhs,
    prop51_bound,
    sakhi1_bound,
    sakhi2_bound,
    sakhi2_lambda_grid,
    sakhi_V_tau,
    second_moment_term_V,
)
from smoothopl.data import LoggedDataset, normalize_rows
from smoothopl.estimators import EstimatorSpec, estimate_risk
from smoothopl.oracle import exact_second_moment_terms, random_policy, random_problem


def _logged(rng, n=40, d=3, K=5, P0=None):
    X = normalize_rows(rng.standard_normal((n, d)))
    P = rng.dirichlet(np.ones(K), size=n) if P0 is None else np.tile(P0, (n, 1))
    a = np.array([rng.choice(K, p=p) for p in P])
    return LoggedDataset(X, a, -rng.random(n), P)


# ---------------------------------------------------------------- KL


def test_kl_examples():
    mu0 = np.zeros((2, 3))
    assert kl_gaussian_upper(mu0, mu0, 1.0, 1.0) == 0.0
    mu = mu0.copy()
    mu[0, 0] = 1.0
    assert kl_gaussian_upper(mu, mu0, 1.0, 1.0) == 0.5


def test_kl_upper_dominates_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        mu0 = rng.standard_normal((3, 4))
        mu = mu0 + rng.standard_normal((3, 4))
        s0 = float(np.exp(rng.uniform(-1, 1)))
        s = s0 * rng.uniform(0.05, 1.0)
        assert kl_gaussian_upper(mu, mu0, s, s0) >= kl_gaussian_exact(mu, mu0, s, s0) - 1e-12
        assert abs(kl_gaussian_upper(mu, mu0, s0, s0) - kl_gaussian_exact(mu, mu0, s0, s0)) <= 1e-12


def test_kl_rejects_sigma_above_prior():
    with pytest.raises(ValueError):
        kl_gaussian_upper(np.zeros(2), np.zeros(2), 2.0, 1.0)


# ---------------------------------------------------------------- B and V


def test_B_alpha_one_zero():
    rng = np.random.default_rng(1)
    ds = _logged(rng)
    assert bias_term_B(1.0, ds, rng.dirichlet(np.ones(5), size=ds.n)) == pytest.approx(0.0, abs=1e-15)


def test_B_uniform_closed_form():
    rng = np.random.default_rng(2)
    ds = _logged(rng, K=10, P0=np.full(10, 0.1))
    T = rng.dirichlet(np.ones(10), size=ds.n)
    assert bias_term_B(0.5, ds, T) == pytest.approx(1 - 10 ** -0.5, abs=1e-12)


def test_B_and_V_monotone():
    rng = np.random.default_rng(3)
    grid = np.linspace(0, 1, 11)
    for _ in range(100):
        ds = _logged(rng, n=10, K=int(rng.integers(2, 8)))
        T = rng.dirichlet(np.ones(ds.K), size=ds.n)
        B = [bias_term_B(a, ds, T) for a in grid]
        V = [second_moment_term_V(a, ds, T) for a in grid]
        assert np.all(np.diff(B) <= 1e-12)
        assert np.all(np.diff(V) >= -1e-12)


def test_V_alpha_zero_bounded():
    rng = np.random.default_rng(4)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    rows = np.arange(ds.n)
    expected = np.mean(np.sum(T * ds.propensities, axis=1) + T[rows, ds.actions] * ds.costs ** 2)
    v = second_moment_term_V(0.0, ds, T)
    assert v == pytest.approx(expected, rel=1e-12)
    assert v <= 2


def test_V_uniform_dirac():
    K, alpha = 6, 0.7
    rng = np.random.default_rng(5)
    ds = _logged(rng, n=200, K=K, P0=np.full(K, 1 / K))
    ds = LoggedDataset(ds.X, ds.actions, -np.ones(ds.n), ds.propensities)
    T = np.zeros((ds.n, K))
    T[:, 2] = 1.0
    expected = K ** (2 * alpha - 1) + K ** (2 * alpha) * np.mean(ds.actions == 2)
    v = second_moment_term_V(alpha, ds, T)
    assert v == pytest.approx(expected, rel=1e-12)
    assert v <= 2 * K ** (2 * alpha)


def test_B_V_grad_match_linearity():
    rng = np.random.default_rng(6)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    for fn in (bias_term_B, second_moment_term_V):
        val, G = fn(0.4, ds, T, return_grad=True)
        E = rng.standard_normal(T.shape) * 1e-3
        assert fn(0.4, ds, T + E) - val == pytest.approx(np.sum(G * E), rel=1e-9, abs=1e-15)


# ---------------------------------------------------------------- lambda*


def test_lambda_star_examples():
    assert lambda_star(500.0, 1000, 1.0) == pytest.approx(1.0, abs=1e-15)
    assert lambda_star(3.0, 4000, 2.0) == pytest.approx(lambda_star(3.0, 1000, 2.0) / 2, rel=1e-14)


def test_lambda_star_grid_minimal():
    rng = np.random.default_rng(7)
    for _ in range(100):
        kl2, n, V = rng.uniform(0.5, 50), int(rng.integers(10, 10**5)), rng.uniform(0.01, 100)
        lam = lambda_star(kl2, n, V)
        f = lambda l: kl2 / (n * l) + 0.5 * l * V  # noqa: E731
        grid = np.linspace(lam / 10, lam * 10, 1000)
        assert f(lam) <= np.min(f(grid)) + 1e-12


# ---------------------------------------------------------------- main bound


def test_main_bound_closed_form_at_alpha_one():
    rng = np.random.default_rng(8)
    ds = _logged(rng, n=300)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    cfg = BoundConfig(delta=0.05, alpha=1.0)
    est = estimate_risk(EstimatorSpec.ips(), ds, T)
    terms = compute_terms(ds, T, 0.0, cfg)
    n = ds.n
    B = bias_term_B(1.0, ds, T)
    V = second_moment_term_V(1.0, ds, T)
    expected = est.value + math.sqrt(math.log(4 * math.sqrt(n) / 0.05) / (2 * n)) + B + math.sqrt(2 * math.log(4 / 0.05) * V / n)
    assert main_bound(est, terms, cfg) == pytest.approx(expected, abs=1e-12)


def test_main_bound_star_identity_and_nonnegative_penalty():
    rng = np.random.default_rng(9)
    for _ in range(50):
        ds = _logged(rng, n=50)
        T = rng.dirichlet(np.ones(5), size=ds.n)
        alpha = float(rng.uniform(0, 1))
        kl = float(rng.uniform(0, 20))
        cfg = BoundConfig(alpha=alpha)
        terms = compute_terms(ds, T, kl, cfg)
        closed = math.sqrt(terms.kl1 / (2 * ds.n)) + terms.bias_term + math.sqrt(2 * terms.kl2 * terms.second_moment / ds.n)
        assert terms.penalty == pytest.approx(closed, abs=1e-12)
        assert terms.penalty >= 0


def test_main_bound_rejects_alpha_mismatch():
    rng = np.random.default_rng(10)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    cfg = BoundConfig(alpha=0.5)
    with pytest.raises(ValueError):
        main_bound(estimate_risk(EstimatorSpec.ips_alpha(0.4), ds, T), compute_terms(ds, T, 0.0, cfg), cfg)


def test_bounds_permutation_invariant():
    rng = np.random.default_rng(11)
    ds = _logged(rng, n=30)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    perm = rng.permutation(ds.n)
    dp = ds.subset(perm)
    cfg = BoundConfig(alpha=0.6)
    a = compute_terms(ds, T, 1.0, cfg).penalty
    b = compute_terms(dp, T[perm], 1.0, cfg).penalty
    assert a == pytest.approx(b, rel=1e-13)


def test_grid_lambda_mode_union_bound():
    rng = np.random.default_rng(12)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    cfg = BoundConfig(lambda_mode="grid", lambda_grid=[0.1, 0.2, 0.4, 0.8])
    terms = compute_terms(ds, T, 0.0, cfg)
    assert terms.lam in cfg.lambda_grid
    assert terms.kl2 == pytest.approx(math.log(4 / (0.05 / 4)))


# ---------------------------------------------------------------- adaptive alpha


def test_adaptive_alpha_is_grid_minimum():
    rng = np.random.default_rng(13)
    for _ in range(20):
        ds = _logged(rng)
        T = rng.dirichlet(np.ones(5), size=ds.n)
        kl2 = float(rng.uniform(1, 20))
        a = adaptive_alpha(ds, T, kl2)
        grid, vals = adaptive_alpha_objective(ds, T, kl2)
        assert len(grid) == 101
        j = int(np.argmin(vals))
        assert a == grid[j]
        direct = bias_term_B(a, ds, T) + math.sqrt(2 * kl2 * second_moment_term_V(a, ds, T) / ds.n)
        assert direct == pytest.approx(vals[j], rel=1e-10)
        assert vals[j] <= vals[0] and vals[j] <= vals[-1]


def test_adaptive_alpha_large_n():
    rng = np.random.default_rng(14)
    ds = _logged(rng, K=4, P0=np.full(4, 0.25))
    T = rng.dirichlet(np.ones(4), size=ds.n)
    assert adaptive_alpha(ds, T, 3.0, n=10**9) == 1.0


# ---------------------------------------------------------------- extensions


def test_any_lambda_dominates_fixed():
    rng = np.random.default_rng(15)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    for lam in (0.01, 0.3, 0.9):
        cfg = BoundConfig(alpha=0.8, lambda_mode="fixed", lam=lam)
        t = compute_terms(ds, T, 2.0, cfg)
        assert bound_any_lambda(0.0, 2.0, t.bias_term, t.second_moment, ds.n, 0.05, lam) >= t.penalty


def test_any_lambda_kl_prime():
    # kl term at lam = 1/2, KL = 0, delta = 0.05 is 2 ln 320.
    n, lam = 10**4, 0.5
    total = bound_any_lambda(0.0, 0.0, 0.0, 0.0, n, 0.05, lam)
    kl1 = math.log(8 * math.sqrt(n) / (0.05 * lam))
    kl2p = total - math.sqrt(kl1 / (2 * n))
    assert kl2p * n * lam == pytest.approx(2 * math.log(320), rel=1e-12)
    assert 2 * math.log(320) == pytest.approx(11.54, abs=5e-3)


def test_any_alpha_uses_doubled_alpha():
    rng = np.random.default_rng(16)
    ds = _logged(rng)
    T = rng.dirichlet(np.ones(5), size=ds.n)
    V1 = second_moment_term_V(1.0, ds, T)
    V2 = second_moment_term_V(2.0, ds, T)
    assert V2 > V1
    a = bound_any_alpha(0.0, 0.0, 0.0, V2, ds.n, 0.05, 0.1, 1.0)
    b = bound_any_alpha(0.0, 0.0, 0.0, V1, ds.n, 0.05, 0.1, 1.0)
    assert a > b


def test_oracle_inequality_examples():
    val = oracle_inequality_rhs(0.0, 10, 10**4, 1.0, 0.05)
    assert val == pytest.approx(math.sqrt(2 * math.log(400 / 0.05)) / 100 + 2 * math.log(80) / 100 + 1.1, rel=1e-12)
    assert val == pytest.approx(1.230, abs=1e-3)
    vals = [oracle_inequality_rhs(1.0, 5, n, 0.7, 0.05) for n in (10, 100, 1000, 10**4)]
    assert np.all(np.diff(vals) <= 0)


def test_prop51_blows_up_at_small_lambda():
    vals = [prop51_bound(-0.5, 1.0, lam, 1.0, 1.0, 100, 0.05) for lam in (1e-2, 1e-4, 1e-8)]
    assert vals[0] < vals[1] < vals[2] and vals[2] > 1e5


def test_prop51_population_term_enumeration():
    rng = np.random.default_rng(17)
    prob = random_problem(rng, m=3, K=4, cost_noise="deterministic")
    P = random_policy(rng, 3, 4)
    _, sq, _ = exact_second_moment_terms(prob, prob.logging, P, 0.6)
    P0 = prob.logging
    manual = sum(
        prob.context_probs[x] * P0[x, a] * P[x, a] * prob.cost_table[x, a] ** 2 / P0[x, a] ** 1.2
        for x in range(3)
        for a in range(4)
    )
    assert sq == pytest.approx(manual, rel=1e-12)


def test_london_examples():
    val = london_bound(0.0, 0.0, 0.1, 1001, 0.05)
    c = math.log(20020) / 100
    assert val == pytest.approx(math.sqrt(2 * 10 * c) + 2 * c, rel=1e-12)
    assert val == pytest.approx(1.606, abs=1e-3)
    assert london_bound(0.0, 0.0, 0.1, 5000, 0.05) < val
    assert london_bound(0.0, 0.0, 1e-4, 1001, 0.05) > 100


def test_sakhi1_examples():
    # Exponent argument zero: -tau*lam*R - (KL + ln(2 sqrt(n)/delta))/n = 0.
    n, delta, tau, lam = 100, 0.05, 0.1, 1.0
    r = -(math.log(2 * math.sqrt(n) / delta) / n) / (tau * lam)
    assert sakhi1_bound(r, 0.0, tau, n, delta, lam) == pytest.approx(0.0, abs=1e-15)
    val = sakhi1_bound(-1.0, 0.0, 0.1, 10**4, 0.05, 1.0)
    expected = (1 / (0.1 * (math.e - 1))) * (1 - math.exp(0.1 - math.log(2 * 100 / 0.05) / 10**4))
    assert val == pytest.approx(expected, rel=1e-12)
    assert val == pytest.approx(-0.6068, abs=1e-3)


def test_sakhi1_tighter_with_smaller_kl():
    vals = [sakhi1_bound(-0.5, kl, 0.1, 500, 0.05, 1.0) for kl in (0.0, 1.0, 5.0, 20.0)]
    assert np.all(np.diff(vals) > 0)


def test_sakhi1_is_valid_catoni_bound():
    # Direct transcription of Catoni's bound for losses 1 + tau c in [0, 1].
    r, kl, tau, n, delta, lam = -0.7, 2.0, 0.2, 300, 0.05, 1.5
    C = (kl + math.log(2 * math.sqrt(n) / delta)) / n
    loss_bound = (1 - math.exp(-lam * (1 + tau * r) - C)) / (1 - math.exp(-lam))
    assert sakhi1_bound(r, kl, tau, n, delta, lam) == pytest.approx((loss_bound - 1) / tau, rel=1e-12)


def test_sakhi1_clamp_warning():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        _, flag = sakhi1_bound(-0.5, 0.0, 0.1, 500, 0.05, 100.0, return_flag=True)
    assert flag and any(issubclass(x.category, LambdaClampWarning) for x in w)


def test_g_values():
    assert g(1.0) == pytest.approx(math.e - 2, abs=1e-12)
    assert g(1e-8) == pytest.approx(0.5, abs=1e-6)
    assert g(0.0) == 0.5


@settings(max_examples=50, deadline=None)
@given(u=st.floats(-5, 5))
def test_g_continuous(u):
    assert g(u) == pytest.approx(g(u + 1e-9), rel=1e-5, abs=1e-6)


def test_sakhi_V_uniform():
    K = 5
    rng = np.random.default_rng(18)
    ds = _logged(rng, K=K, P0=np.full(K, 1 / K))
    T = rng.dirichlet(np.ones(K), size=ds.n)
    assert sakhi_V_tau(ds, T, 0.1) == pytest.approx(K, rel=1e-12)


def test_sakhi2_grid_and_bound():
    grid = sakhi2_lambda_grid(10**4)
    assert len(grid) == 10 and grid[5] == pytest.approx(100.0)
    a = sakhi2_bound(-0.3, 1.0, 0.1, 10**4, 0.05, V_tau=2.0)
    b = sakhi2_bound(-0.3, 1.0, 0.1, 10**4, 0.05, lambda_grid=grid[:1], V_tau=2.0)
    assert a <= b


def test_learning_principle_examples():
    mu0 = np.zeros((2, 2))
    mu = mu0.copy()
    mu[1, 0] = 1.0
    assert learning_principle_objective(-0.3, mu, mu0, 0.2, 3.0, (0, 0, 0)) == -0.3
    assert learning_principle_objective(-0.3, mu, mu0, 0.2, 3.0, (1, 0, 0)) == pytest.approx(0.7)
    assert learning_principle_objective(-0.3, mu, mu0, 0.2, 3.0) == pytest.approx(-0.3 + 1e-5 * (1 + 3.0 + 0.2))


def test_bound_report_json():
    import json

    rec = json.loads(bound_report("ours", 0.1, -0.2, kl=1.0, lam=0.3, B=0.1, V=2.0, alpha=0.9, delta=0.05))
    assert rec["objective_name"] == "ours" and rec["total"] == 0.1 and rec["tau"] is None
