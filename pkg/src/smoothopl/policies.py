"""Stochastic linear policies over K actions.

Three classes are supported:

* softmax: ``pi(a|x) ∝ exp(eta * x^T theta_a)``;
* Gaussian: ``pi(a|x) = P(argmax_b x^T theta_b = a)`` with ``theta ~ N(mu, sigma^2 I)``;
* mixed-logit: as Gaussian with standard Gumbel noise added to each score.

Gaussian and mixed-logit propensities are Monte Carlo estimates. Every
estimate exposes a vector-Jacobian product so that the gradient of any
objective ``F(P)`` is the exact derivative of the MC estimate under the same
(frozen) draws.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from ._kernels import gaussian_mc_jacobian
from ._validation import check_features

__all__ = [
    "SIGMA_MIN",
    "SIGMA_MAX",
    "SoftmaxParams",
    "GaussianPolicyParams",
    "MixedLogitParams",
    "McConfig",
    "PropensityForward",
    "draw_noise",
    "propensity_forward",
    "propensities",
    "softmax_propensities",
    "gaussian_propensities",
    "mixed_logit_propensities",
    "sample_actions",
    "sample_action",
    "weighted_propensity_objective_grad",
    "SoftmaxLoggingPolicy",
    "fit_logging_policy",
    "save_params",
    "load_params",
]

SIGMA_MIN = 1e-3
SIGMA_MAX = 1e3
_NORM_TOL = 1e-6


def _clamped_sigma(log_sigma):
    raw = float(np.exp(log_sigma))
    return min(max(raw, SIGMA_MIN), SIGMA_MAX), SIGMA_MIN < raw < SIGMA_MAX


def _finite_matrix(M, name):
    M = np.array(M, dtype=np.float64, copy=True)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a K x d matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} must be finite")
    M.setflags(write=False)
    return M


@dataclass(frozen=True)
class SoftmaxParams:
    """``theta`` of shape (K, d) and inverse temperature ``eta``."""

    theta: np.ndarray
    inv_temperature: float = 1.0

    kind = "softmax"

    def __post_init__(self):
        object.__setattr__(self, "theta", _finite_matrix(self.theta, "theta"))
        if not np.isfinite(self.inv_temperature):
            raise ValueError("inv_temperature must be finite")
        object.__setattr__(self, "inv_temperature", float(self.inv_temperature))

    @property
    def matrix(self):
        return self.theta

    @property
    def K(self):
        return self.theta.shape[0]

    @property
    def d(self):
        return self.theta.shape[1]

    def to_vector(self):
        """Learnable coordinates; the inverse temperature is held fixed."""
        return self.theta.ravel().copy()

    def with_vector(self, v):
        return SoftmaxParams(np.asarray(v, dtype=np.float64).reshape(self.theta.shape), self.inv_temperature)


@dataclass(frozen=True)
class _NoisyLinearParams:
    mu: np.ndarray
    log_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite_matrix(self.mu, "mu"))
        ls = float(self.log_sigma)
        if np.isnan(ls) or ls == np.inf:
            raise ValueError("log_sigma must be finite or -inf")
        object.__setattr__(self, "log_sigma", ls)

    @property
    def matrix(self):
        return self.mu

    @property
    def K(self):
        return self.mu.shape[0]

    @property
    def d(self):
        return self.mu.shape[1]

    @property
    def sigma(self):
        """``exp(log_sigma)`` clamped to ``[SIGMA_MIN, SIGMA_MAX]``."""
        return _clamped_sigma(self.log_sigma)[0]

    def to_vector(self):
        return np.concatenate([self.mu.ravel(), [self.log_sigma]])

    def with_vector(self, v):
        v = np.asarray(v, dtype=np.float64)
        return type(self)(v[:-1].reshape(self.mu.shape), float(v[-1]))


@dataclass(frozen=True)
class GaussianPolicyParams(_NoisyLinearParams):
    """Mean ``mu`` (K, d) and ``log_sigma`` of the Gaussian policy."""

    kind = "gaussian"


@dataclass(frozen=True)
class MixedLogitParams(_NoisyLinearParams):
    """Mean ``mu`` (K, d) and ``log_sigma`` of the mixed-logit policy.

    ``log_sigma = -inf`` is accepted and means ``sigma = 0`` exactly, in which
    case the policy coincides with the softmax policy of ``mu``.
    """

    kind = "mixed_logit"

    @property
    def sigma(self):
        if self.log_sigma == -np.inf:
            return 0.0
        return _clamped_sigma(self.log_sigma)[0]


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo settings.

    Attributes
    ----------
    S : int
        Number of draws per context.
    seed : int
        Stream key. Draws for optimizer step ``t`` come from the generator
        keyed by ``(seed, t)``; row ``i`` of the block belongs to datum ``i``.
    shared : bool
        Share one block of draws across all contexts. Identical contexts are
        then evaluated once, which makes non-contextual problems cheap.
    """

    S: int = 32
    seed: int = 0
    shared: bool = False

    def __post_init__(self):
        if int(self.S) < 1:
            raise ValueError("S must be >= 1")


def draw_noise(params, n, mc, step=0):
    """Standard normal draws for ``n`` contexts at optimizer step ``step``.

    Returns ``None`` for softmax, an array (n or 1, S) for Gaussian and
    (n or 1, S, K) for mixed-logit policies.
    """
    if params.kind == "softmax":
        return None
    rows = 1 if mc.shared else n
    rng = np.random.default_rng([int(mc.seed), int(step)])
    if params.kind == "gaussian":
        return rng.standard_normal((rows, mc.S))
    return rng.standard_normal((rows, mc.S, params.K))


def _features(X, params, need_unit):
    X = check_features(getattr(X, "X", X))
    if X.shape[1] != params.d:
        raise ValueError(f"features have dimension {X.shape[1]}, policy expects {params.d}")
    if need_unit:
        norms = np.linalg.norm(X, axis=1)
        if np.any(np.abs(norms - 1.0) > _NORM_TOL):
            raise ValueError("features must have unit L2 norm for this policy class")
    return X


class PropensityForward:
    """Propensity matrix together with its vector-Jacobian product.

    Attributes
    ----------
    P : ndarray (n, K)
    params : policy parameters the propensities were computed for
    """

    def __init__(self, params, P, vjp):
        self.params = params
        self.P = P
        self._vjp = vjp

    def vjp(self, W):
        """Gradient of ``sum(W * P)`` with respect to ``params.to_vector()``."""
        W = np.asarray(W, dtype=np.float64)
        if W.shape != self.P.shape:
            raise ValueError(f"weights have shape {W.shape}, expected {self.P.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weights must be finite")
        return self._vjp(W)


def _softmax_forward(params, X):
    eta = params.inv_temperature
    P = softmax(eta * (X @ params.theta.T), axis=1)

    def vjp(W):
        G = eta * P * (W - np.sum(W * P, axis=1, keepdims=True))
        return (G.T @ X).ravel()

    return PropensityForward(params, P, vjp)


def _expand_shared(X, noise):
    """Collapse identical contexts when draws are shared across rows."""
    Xu, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    reps = np.broadcast_to(noise, (Xu.shape[0],) + noise.shape[1:])
    return Xu, inverse, np.ascontiguousarray(reps)


def _collapse(W, inverse, m):
    Wu = np.zeros((m, W.shape[1]))
    np.add.at(Wu, inverse, W)
    return Wu


def _gaussian_forward(params, X, noise):
    sigma, free = _clamped_sigma(params.log_sigma)
    inverse = None
    if noise.shape[0] != X.shape[0]:
        X, inverse, noise = _expand_shared(X, noise)
    t = (X @ params.mu.T) / sigma
    Pt, J = gaussian_mc_jacobian(np.ascontiguousarray(t), np.ascontiguousarray(noise), True)
    Z = Pt.sum(axis=1, keepdims=True)
    Pu = Pt / Z

    def vjp(W):
        if inverse is not None:
            W = _collapse(W, inverse, Pu.shape[0])
        Wt = (W - np.sum(W * Pu, axis=1, keepdims=True)) / Z
        Gt = np.einsum("ia,iab->ib", Wt, J)
        g_mu = (Gt.T @ X) / sigma
        g_ls = -float(np.sum(Gt * t)) if free else 0.0
        return np.concatenate([g_mu.ravel(), [g_ls]])

    P = Pu if inverse is None else Pu[inverse]
    return PropensityForward(params, P, vjp)


def _mixed_logit_forward(params, X, noise):
    sigma = params.sigma
    if sigma == 0.0:
        # No noise: the softmax path gives bit-identical propensities.
        sm = _softmax_forward(SoftmaxParams(params.mu), X)
        return PropensityForward(params, sm.P, lambda W: np.concatenate([sm.vjp(W), [0.0]]))
    free = params.log_sigma != -np.inf and _clamped_sigma(params.log_sigma)[1]
    inverse = None
    if noise.shape[0] != X.shape[0]:
        X, inverse, noise = _expand_shared(X, noise)
    S = noise.shape[1]
    s = X @ params.mu.T
    ps = softmax(s[:, None, :] + sigma * noise, axis=2)
    Pu = ps.mean(axis=1)

    def vjp(W):
        if inverse is not None:
            W = _collapse(W, inverse, Pu.shape[0])
        Ws = W[:, None, :]
        Gs = ps * (Ws - np.sum(Ws * ps, axis=2, keepdims=True)) / S
        g_mu = Gs.sum(axis=1).T @ X
        g_ls = sigma * float(np.sum(Gs * noise)) if free else 0.0
        return np.concatenate([g_mu.ravel(), [g_ls]])

    P = Pu if inverse is None else Pu[inverse]
    return PropensityForward(params, P, vjp)


def propensity_forward(params, X, mc=None, step=0, noise=None, rows=None):
    """Evaluate propensities and keep what is needed for gradients.

    Parameters
    ----------
    params : SoftmaxParams, GaussianPolicyParams or MixedLogitParams
    X : (n, d) features or an object with an ``X`` attribute
    mc : McConfig, optional
        Defaults to ``McConfig()``.
    step : int
        Optimizer step used to key the draws.
    noise : ndarray, optional
        Pre-drawn noise block (see :func:`draw_noise`); overrides ``mc``/``step``.
    rows : index array, optional
        Rows of the noise block to use when ``X`` is a minibatch of a larger
        dataset whose block was drawn for all rows.
    """
    X = _features(X, params, need_unit=params.kind != "softmax")
    if params.kind == "softmax":
        return _softmax_forward(params, X)
    mc = McConfig() if mc is None else mc
    if noise is None:
        noise = draw_noise(params, X.shape[0] if rows is None else int(np.max(rows)) + 1, mc, step)
    if rows is not None and noise.shape[0] != 1:
        noise = noise[np.asarray(rows)]
    if noise.shape[0] not in (1, X.shape[0]):
        raise ValueError("noise block does not match the number of contexts")
    if params.kind == "gaussian":
        return _gaussian_forward(params, X, noise)
    if params.kind == "mixed_logit":
        return _mixed_logit_forward(params, X, noise)
    raise ValueError(f"unknown policy kind {params.kind!r}")


def propensities(params, X, mc=None, step=0):
    """Propensity matrix (n, K); exact for softmax, Monte Carlo otherwise."""
    return propensity_forward(params, X, mc, step).P


def _single(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _squeeze_like(x, P):
    return P[0] if np.asarray(x).ndim == 1 else P


def softmax_propensities(params, x):
    """Exact softmax propensities for one context (d,) or many (n, d)."""
    X = _features(_single(x), params, need_unit=False)
    if not np.all(np.isfinite(params.inv_temperature * (X @ params.theta.T))):
        raise ValueError("non-finite logits")
    return _squeeze_like(x, _softmax_forward(params, X).P)


def gaussian_propensities(params, x, mc=None):
    """Monte Carlo Gaussian-policy propensities, renormalized to sum to one."""
    return _squeeze_like(x, propensities(params, _single(x), mc))


def mixed_logit_propensities(params, x, mc=None):
    """Monte Carlo mixed-logit propensities (average of softmax vectors)."""
    return _squeeze_like(x, propensities(params, _single(x), mc))


def sample_actions(params, X, rng):
    """Draw one action per context from the policy itself.

    Gaussian and mixed-logit actions are argmaxes of perturbed scores, so
    sampling is exact. Ties go to the lowest index.
    """
    X = _features(X, params, need_unit=False)
    n = X.shape[0]
    if params.kind == "softmax":
        P = softmax_propensities(params, X)
        cdf = np.cumsum(P, axis=1)
        cdf[:, -1] = 1.0
        u = rng.random(n)
        return (u[:, None] >= cdf).sum(axis=1)
    scores = X @ params.mu.T
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    scores = scores + params.sigma * norms * rng.standard_normal((n, params.K))
    if params.kind == "mixed_logit":
        scores = scores + rng.gumbel(size=(n, params.K))
    return np.argmax(scores, axis=1)


def sample_action(params, x, seed):
    """Single action for context ``x``, deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    return int(sample_actions(params, _single(x), rng)[0])


def weighted_propensity_objective_grad(params, dataset, weights, mc=None, step=0):
    """Value and gradient of ``sum_{i,a} w_{i,a} pi(a | x_i)``.

    The gradient is the exact derivative of the Monte Carlo value under the
    same draws, so frozen-draw finite differences agree with it.

    Returns
    -------
    value : float
    grad : parameters object of the same class holding the gradient
    """
    W = np.asarray(weights, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise ValueError("weights must be finite")
    fwd = propensity_forward(params, dataset, mc, step)
    value = float(np.sum(W * fwd.P))
    g = fwd.vjp(W)
    if params.kind == "softmax":
        X = _features(dataset, params, need_unit=False)
        logits = X @ params.theta.T
        P = fwd.P
        g_eta = float(np.sum(W * P * (logits - np.sum(P * logits, axis=1, keepdims=True))))
        return value, SoftmaxParams(g.reshape(params.theta.shape), g_eta)
    return value, type(params)(g[:-1].reshape(params.mu.shape), g[-1])


# ----------------------------------------------------------------------------
# Logging policy


def _adam_update(p, g, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return p - lr * mhat / (np.sqrt(vhat) + eps), m, v


class SoftmaxLoggingPolicy(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier fitted with Adam on L2-penalized cross-entropy.

    Parameters
    ----------
    l2 : float
        Coefficient of ``||theta||^2``.
    lr : float
        Adam learning rate.
    epochs : int
    batch_size : int
    random_state : int

    Attributes
    ----------
    coef_ : ndarray (K, d)
    classes_ : ndarray (K,)
    """

    def __init__(self, l2=1e-6, lr=0.1, epochs=10, batch_size=32, random_state=0):
        self.l2 = l2
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y, n_classes=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(np.int64)
        if y.min() < 0:
            raise ValueError("labels must be nonnegative")
        K = int(n_classes if n_classes is not None else y.max() + 1)
        n, d = X.shape
        rng = np.random.default_rng(self.random_state)
        theta = np.zeros((K, d))
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        t = 0
        Y = np.eye(K)[y]
        for _ in range(int(self.epochs)):
            order = rng.permutation(n)
            for start in range(0, n, int(self.batch_size)):
                idx = order[start:start + int(self.batch_size)]
                P = softmax(X[idx] @ theta.T, axis=1)
                g = (P - Y[idx]).T @ X[idx] / len(idx) + 2.0 * self.l2 * theta
                t += 1
                theta, m, v = _adam_update(theta, g, m, v, t, self.lr)
        self.coef_ = theta
        self.classes_ = np.arange(K)
        self.n_features_in_ = d
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        X = check_features(X)
        return softmax(X @ self.coef_.T, axis=1)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def to_params(self, eta0=1.0):
        check_is_fitted(self)
        return SoftmaxParams(self.coef_, eta0)


def fit_logging_policy(ds, eta0, split_frac=0.05, seed=0, **fit_kwargs):
    """Fit ``mu_0`` on a random ``split_frac`` share of ``ds``.

    Returns
    -------
    params : SoftmaxParams
        ``theta = mu_0`` and ``inv_temperature = eta0``.
    held_in : ndarray of int
        Indices used for fitting; the trainer must exclude them.
    """
    if ds.n == 0:
        raise ValueError("dataset is empty")
    if not 0.0 < split_frac <= 1.0:
        raise ValueError("split_frac must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    m = int(round(split_frac * ds.n))
    if m < ds.K:
        raise ValueError(f"split of {m} examples is smaller than K={ds.K}")
    held_in = np.sort(rng.permutation(ds.n)[:m])
    est = SoftmaxLoggingPolicy(random_state=seed, **fit_kwargs)
    est.fit(ds.X[held_in], ds.y[held_in], n_classes=ds.K)
    return est.to_params(eta0), held_in


# ----------------------------------------------------------------------------
# Serialization


def save_params(params, path, extra_meta=None):
    """Write parameters as CSV: a JSON header comment, then one row per action."""
    import json

    meta = {"kind": params.kind, "K": params.K, "d": params.d}
    if params.kind == "softmax":
        meta["inv_temperature"] = params.inv_temperature
    else:
        meta["log_sigma"] = params.log_sigma
    if extra_meta:
        meta.update(extra_meta)
    lines = ["# " + json.dumps(meta, sort_keys=True), ",".join(f"f{j}" for j in range(params.d))]
    lines += [",".join(repr(float(v)) for v in row) for row in params.matrix]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path):
    """Inverse of :func:`save_params`."""
    import json

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing JSON header comment")
    try:
        meta = json.loads(lines[0][1:].strip())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from None
    rows = [line for line in lines[2:] if line.strip()]
    try:
        M = np.array([[float(v) for v in line.split(",")] for line in rows], dtype=np.float64)
    except ValueError:
        raise ValueError(f"{path}: non-numeric parameter entry") from None
    if M.shape != (meta.get("K"), meta.get("d")):
        raise ValueError(f"{path}: parameter matrix shape {M.shape} does not match header")
    kind = meta.get("kind")
    if kind == "softmax":
        return SoftmaxParams(M, meta.get("inv_temperature", 1.0))
    if kind == "gaussian":
        return GaussianPolicyParams(M, meta.get("log_sigma", 0.0))
    if kind == "mixed_logit":
        return MixedLogitParams(M, meta.get("log_sigma", 0.0))
    raise ValueError(f"{path}: unknown policy kind {kind!r}")
