"""Gradient-based minimization of bound objectives over policy parameters."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features
from .bounds import (
    BoundConfig,
    adaptive_alpha,
    kl_gaussian_upper,
    objective_estimate,
    objective_learning_principle,
    objective_london,
    objective_ours,
    objective_sakhi1,
    objective_sakhi2,
    paper_default_alpha,
    paper_default_tau,
)
from .data import LoggedDataset, SupervisedDataset, evaluate_policy_reward
from .estimators import EstimatorSpec
from .policies import (
    GaussianPolicyParams,
    McConfig,
    MixedLogitParams,
    SoftmaxParams,
    draw_noise,
    propensity_forward,
)

__all__ = [
    "OBJECTIVES",
    "POLICY_CLASSES",
    "AdamState",
    "adam_step",
    "TrainConfig",
    "TrainReport",
    "TrainingDivergedError",
    "make_prior",
    "objective_eval",
    "objective_value_and_grad",
    "train",
    "PolicyLearner",
]

OBJECTIVES = ("ours", "london", "sakhi1", "sakhi2", "lp", "estimate")
POLICY_CLASSES = ("softmax", "gaussian", "mixed_logit")
_KL_OBJECTIVES = ("ours", "london", "sakhi1", "sakhi2")


class TrainingDivergedError(RuntimeError):
    """Raised when the objective or its gradient becomes non-finite.

    Attributes
    ----------
    last_params : parameters from the last finite step
    epoch : int
    """

    def __init__(self, message, last_params=None, epoch=None):
        super().__init__(message)
        self.last_params = last_params
        self.epoch = epoch


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params):
        p = np.asarray(params, dtype=np.float64)
        return cls(np.zeros_like(p), np.zeros_like(p))


def adam_step(state: AdamState, params, grad, lr):
    """Bias-corrected Adam update.

    Returns
    -------
    state : AdamState
        New state (the input is not modified).
    params : ndarray, same shape as the input
    """
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad.ravel()))
        raise FloatingPointError(f"non-finite gradient at {bad.size} coordinates (first index {int(bad[0])})")
    b1, b2 = state.beta1, state.beta2
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * grad * grad
    mhat = m / (1.0 - b1 ** t)
    vhat = v / (1.0 - b2 ** t)
    new = params - lr * mhat / (np.sqrt(vhat) + state.eps)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and objective settings.

    Attributes
    ----------
    objective : one of ``OBJECTIVES``
        ``ours`` is the smoothed estimate plus the two-sided bound; ``london``,
        ``sakhi1`` and ``sakhi2`` are the clipped-estimate baselines; ``lp`` is
        the penalized learning principle; ``estimate`` minimizes ``estimator``
        alone.
    bound : BoundConfig
        ``delta``, ``alpha`` and ``lambda_mode`` for ``ours``. ``alpha=None``
        in :func:`train` is not allowed; use :meth:`paper_defaults`.
    estimator : EstimatorSpec, optional
        Used by ``estimate`` (required) and optionally to replace the smoothed
        estimate in ``ours``.
    tau : float, optional
        Clipping level of the baselines; defaults to ``n^(-1/4)``.
    policy_class : one of ``POLICY_CLASSES``
    lr, epochs, batch_size
        ``batch_size=None`` is full batch.
    mc : McConfig
    adaptive_alpha : bool
        Re-select ``alpha`` on a grid before every step.
    alpha_grid_size : int
    learn_sigma : bool
    lp_lambdas : (l1, l2, l3)
    sakhi1_log_lambda : float
        Initial ``log(lambda)`` of the exponential baseline.
    seed : int
        Seeds minibatch order.
    """

    objective: str = "ours"
    bound: BoundConfig = field(default_factory=BoundConfig)
    estimator: Optional[EstimatorSpec] = None
    tau: Optional[float] = None
    policy_class: str = "gaussian"
    lr: float = 0.1
    epochs: int = 20
    batch_size: Optional[int] = None
    mc: McConfig = field(default_factory=McConfig)
    adaptive_alpha: bool = False
    alpha_grid_size: int = 101
    learn_sigma: bool = True
    lp_lambdas: tuple = (1e-5, 1e-5, 1e-5)
    sakhi1_log_lambda: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.policy_class not in POLICY_CLASSES:
            raise ValueError(f"unknown policy class {self.policy_class!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValueError("batch_size must be >= 1")
        if self.objective == "estimate" and self.estimator is None:
            raise ValueError("objective 'estimate' needs an estimator spec")
        if self.objective in _KL_OBJECTIVES and self.policy_class == "softmax":
            raise ValueError(f"objective {self.objective!r} needs a Gaussian or mixed-logit policy")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")

    @classmethod
    def paper_defaults(cls, n, **kwargs):
        """``alpha = 1 - n^(-1/4)``, ``tau = n^(-1/4)``, ``delta = 0.05``."""
        bound = kwargs.pop("bound", None) or BoundConfig(alpha=paper_default_alpha(n))
        kwargs.setdefault("tau", paper_default_tau(n))
        return cls(bound=bound, **kwargs)

    def to_dict(self):
        d = asdict(self)
        if self.estimator is not None:
            d["estimator"] = {"variant": self.estimator.variant.value, "hyper": self.estimator.hyper}
        return d


@dataclass
class TrainReport:
    """Trajectory and outcome of a training run.

    Per-epoch entries are recorded before that epoch's updates, using the
    epoch's Monte Carlo draws on the full dataset.
    """

    objective: list
    terms: list
    alpha: list
    final_params: object
    test_reward: Optional[float]
    prior_hash: str
    config: dict

    def to_json(self):
        p = self.final_params
        params = {"kind": p.kind, "matrix": p.matrix.tolist()}
        if p.kind == "softmax":
            params["inv_temperature"] = p.inv_temperature
        else:
            params["log_sigma"] = p.log_sigma
        return json.dumps(
            {
                "objective": self.objective,
                "terms": self.terms,
                "alpha": self.alpha,
                "final_params": params,
                "test_reward": self.test_reward,
                "prior_hash": self.prior_hash,
                "config": self.config,
            },
            sort_keys=True,
            default=_json_default,
        )

    def curves_csv(self):
        lines = ["epoch,objective,alpha"]
        for e, (v, a) in enumerate(zip(self.objective, self.alpha)):
            lines.append(f"{e},{v!r},{a!r}")
        return "\n".join(lines) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not serializable: {type(o).__name__}")


def make_prior(logging: SoftmaxParams, policy_class):
    """Prior ``N(eta0 mu0, I)`` built from a fitted softmax logging policy."""
    mean = logging.inv_temperature * logging.theta
    if policy_class == "gaussian":
        return GaussianPolicyParams(mean, 0.0)
    if policy_class == "mixed_logit":
        return MixedLogitParams(mean, 0.0)
    if policy_class == "softmax":
        return SoftmaxParams(mean, 1.0)
    raise ValueError(f"unknown policy class {policy_class!r}")


def _prior_hash(prior):
    h = hashlib.sha256()
    h.update(prior.kind.encode())
    h.update(np.ascontiguousarray(prior.matrix).tobytes())
    h.update(repr(getattr(prior, "log_sigma", getattr(prior, "inv_temperature", None))).encode())
    return h.hexdigest()


def _check_prior(ds, cfg, prior):
    if prior.kind != cfg.policy_class:
        raise ValueError(f"prior is {prior.kind}, config expects {cfg.policy_class}")
    if prior.K != ds.K or prior.d != ds.d:
        raise ValueError(f"prior shape ({prior.K}, {prior.d}) does not match data (K={ds.K}, d={ds.d})")


def _tau(cfg, n):
    return cfg.tau if cfg.tau is not None else paper_default_tau(n)


class _Problem:
    """Binds data, config and prior; evaluates value and gradient."""

    def __init__(self, ds, cfg, prior):
        _check_prior(ds, cfg, prior)
        self.ds = ds
        self.cfg = cfg
        self.prior = prior
        self.n = cfg.bound.n or ds.n
        self.sigma0 = prior.sigma if prior.kind != "softmax" else None
        self.has_aux = cfg.objective == "sakhi1"

    def split(self, vec):
        if self.has_aux:
            return self.prior.with_vector(vec[:-1]), float(vec[-1])
        return self.prior.with_vector(vec), None

    def initial_vector(self):
        v = self.prior.to_vector()
        if self.has_aux:
            v = np.concatenate([v, [self.cfg.sakhi1_log_lambda]])
        return v

    def evaluate(self, vec, noise, rows=None):
        """Return ``(ObjectiveValue, grad_vector, alpha_used)``."""
        cfg = self.cfg
        params, log_lam = self.split(vec)
        ds = self.ds if rows is None else self.ds.subset(rows)
        fwd = propensity_forward(params, ds.X, noise=noise, rows=rows)
        P = fwd.P
        kind = params.kind
        kl = 0.0
        diff = params.matrix - self.prior.matrix
        if cfg.objective in _KL_OBJECTIVES:
            kl = kl_gaussian_upper(params.mu, self.prior.mu, params.sigma, self.sigma0)
        alpha = cfg.bound.alpha
        if cfg.adaptive_alpha:
            kl2 = kl + math.log(4.0 / cfg.bound.delta)
            alpha = adaptive_alpha(ds, P, kl2, self.n, cfg.alpha_grid_size)
        tau = _tau(cfg, self.n)
        obj = cfg.objective
        if obj == "ours":
            ov = objective_ours(ds, P, kl, cfg.bound.with_alpha(alpha), cfg.estimator, n_total=self.n)
        elif obj == "london":
            ov = objective_london(ds, P, kl, tau, cfg.bound.delta, n_total=self.n)
        elif obj == "sakhi1":
            ov = objective_sakhi1(ds, P, kl, tau, cfg.bound.delta, log_lam, n_total=self.n)
        elif obj == "sakhi2":
            ov = objective_sakhi2(ds, P, kl, tau, cfg.bound.delta, n_total=self.n)
        elif obj == "lp":
            ov = objective_learning_principle(ds, P, float(np.sum(diff * diff)), alpha, cfg.lp_lambdas)
        else:
            ov = objective_estimate(ds, P, cfg.estimator)
        g = fwd.vjp(ov.grad_P)
        g_mat = g[: params.matrix.size].reshape(params.matrix.shape)
        if ov.grad_kl:
            g_mat = g_mat + ov.grad_kl * diff / self.sigma0 ** 2
        if ov.grad_dist2:
            g_mat = g_mat + ov.grad_dist2 * 2.0 * diff
        g[: params.matrix.size] = g_mat.ravel()
        if kind != "softmax":
            raw = math.exp(params.log_sigma)
            if ov.grad_kl and 1e-3 < raw < 1e3:
                g[-1] += ov.grad_kl * (-params.matrix.size)
            if not cfg.learn_sigma:
                g[-1] = 0.0
        if self.has_aux:
            g = np.concatenate([g, [ov.grad_extra.get("log_lambda", 0.0)]])
        return ov, g, alpha

    def project(self, vec):
        """Keep ``sigma <= sigma0`` so the KL upper bound stays valid."""
        if self.cfg.objective in _KL_OBJECTIVES:
            idx = self.prior.matrix.size
            vec[idx] = min(vec[idx], math.log(self.sigma0))
        return vec


def _record(ov, alpha):
    terms = {k: (float(v) if isinstance(v, (int, float, np.floating)) and not isinstance(v, bool) else v) for k, v in ov.terms.items()}
    terms["total"] = float(ov.total)
    terms["alpha_used"] = float(alpha)
    return terms


def objective_eval(ds, params, cfg: TrainConfig, prior, step=0, log_lambda=None):
    """Single full-batch evaluation with the draws of ``step``.

    Returns
    -------
    value : float
    terms : dict
        Breakdown; the entries named in ``terms["parts"]`` sum to ``value``.
    """
    prob = _Problem(ds, cfg, prior)
    vec = params.to_vector()
    if prob.has_aux:
        vec = np.concatenate([vec, [cfg.sakhi1_log_lambda if log_lambda is None else log_lambda]])
    noise = draw_noise(params, ds.n, cfg.mc, step)
    ov, _, alpha = prob.evaluate(vec, noise)
    terms = _record(ov, alpha)
    terms["parts"] = list(ov.parts)
    return float(ov.total), terms


def objective_value_and_grad(ds, params, cfg: TrainConfig, prior, step=0, log_lambda=None):
    """Objective value and its gradient in ``params.to_vector()`` coordinates.

    Uses the draws of ``step``, so finite differences at the same step see
    frozen noise. For ``sakhi1`` the gradient has one extra trailing entry
    for ``log_lambda``.
    """
    prob = _Problem(ds, cfg, prior)
    vec = params.to_vector()
    if prob.has_aux:
        vec = np.concatenate([vec, [cfg.sakhi1_log_lambda if log_lambda is None else log_lambda]])
    ov, grad, _ = prob.evaluate(vec, draw_noise(params, ds.n, cfg.mc, step))
    return float(ov.total), grad


def train(ds: LoggedDataset, cfg: TrainConfig, prior, test: Optional[SupervisedDataset] = None, test_seed=0, callback=None) -> TrainReport:
    """Minimize the configured objective with Adam, starting at the prior.

    Parameters
    ----------
    ds : LoggedDataset
        Training data (must exclude any examples used to fit the prior).
    cfg : TrainConfig
    prior : policy parameters of class ``cfg.policy_class``
        Prior mean and scale; never modified.
    test : SupervisedDataset, optional
        If given, the final policy's reward on it is reported.
    callback : callable(epoch, value, params), optional

    Raises
    ------
    TrainingDivergedError
        If the objective or gradient becomes non-finite.
    """
    prob = _Problem(ds, cfg, prior)
    prior_hash = _prior_hash(prior)
    vec = prob.project(prob.initial_vector())
    state = AdamState.zeros_like(vec)
    n = ds.n
    values, terms, alphas = [], [], []
    last_good = prob.split(vec)[0]
    for epoch in range(int(cfg.epochs)):
        params = prob.split(vec)[0]
        noise = draw_noise(params, n, cfg.mc, epoch)
        try:
            ov, grad, alpha = prob.evaluate(vec, noise)
            if not (math.isfinite(ov.total) and np.all(np.isfinite(grad))):
                raise FloatingPointError("non-finite objective or gradient")
            values.append(float(ov.total))
            terms.append(_record(ov, alpha))
            alphas.append(float(alpha))
            if callback is not None:
                callback(epoch, float(ov.total), params)
            if cfg.batch_size is None or cfg.batch_size >= n:
                state, vec = adam_step(state, vec, grad, cfg.lr)
                vec = prob.project(vec)
            else:
                order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
                for start in range(0, n, int(cfg.batch_size)):
                    rows = np.sort(order[start:start + int(cfg.batch_size)])
                    _, g_b, _ = prob.evaluate(vec, noise, rows)
                    state, vec = adam_step(state, vec, g_b, cfg.lr)
                    vec = prob.project(vec)
            if not np.all(np.isfinite(vec)):
                raise FloatingPointError("non-finite parameters")
        except (FloatingPointError, OverflowError, ValueError) as exc:
            if isinstance(exc, ValueError) and "non-finite" not in str(exc):
                raise
            raise TrainingDivergedError(f"training diverged at epoch {epoch}: {exc}", last_good, epoch) from exc
        last_good = prob.split(vec)[0]
        if _prior_hash(prior) != prior_hash:
            raise RuntimeError("prior was modified during training")
    final = prob.split(vec)[0]
    reward = evaluate_policy_reward(test, final, test_seed) if test is not None else None
    return TrainReport(values, terms, alphas, final, reward, prior_hash, cfg.to_dict())


class PolicyLearner(BaseEstimator):
    """Scikit-learn style wrapper around :func:`train`.

    Parameters
    ----------
    objective : str
    policy_class : str
    alpha : float or None
        ``None`` selects ``1 - n^(-1/4)``.
    adaptive_alpha : bool
    delta : float
    tau : float or None
    lr, epochs, batch_size, n_mc_samples
    prior_mean : ndarray (K, d) or None
        ``None`` uses zeros (uniform prior policy).
    random_state : int
    """

    def __init__(
        self,
        objective="ours",
        policy_class="gaussian",
        alpha=None,
        adaptive_alpha=False,
        delta=0.05,
        tau=None,
        lr=0.1,
        epochs=20,
        batch_size=None,
        n_mc_samples=32,
        prior_mean=None,
        random_state=0,
    ):
        self.objective = objective
        self.policy_class = policy_class
        self.alpha = alpha
        self.adaptive_alpha = adaptive_alpha
        self.delta = delta
        self.tau = tau
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.n_mc_samples = n_mc_samples
        self.prior_mean = prior_mean
        self.random_state = random_state

    def fit(self, X, actions, costs, logging_propensities):
        ds = LoggedDataset(check_features(X), actions, costs, logging_propensities)
        n = ds.n
        alpha = paper_default_alpha(n) if self.alpha is None else self.alpha
        mean = np.zeros((ds.K, ds.d)) if self.prior_mean is None else np.asarray(self.prior_mean, dtype=float)
        prior = {
            "gaussian": lambda: GaussianPolicyParams(mean, 0.0),
            "mixed_logit": lambda: MixedLogitParams(mean, 0.0),
            "softmax": lambda: SoftmaxParams(mean, 1.0),
        }[self.policy_class]()
        cfg = TrainConfig(
            objective=self.objective,
            bound=BoundConfig(delta=self.delta, alpha=alpha),
            tau=self.tau,
            policy_class=self.policy_class,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            mc=McConfig(S=self.n_mc_samples, seed=self.random_state),
            adaptive_alpha=self.adaptive_alpha,
            seed=self.random_state,
        )
        self.report_ = train(ds, cfg, prior)
        self.params_ = self.report_.final_params
        self.n_features_in_ = ds.d
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        mc = McConfig(S=max(self.n_mc_samples, 256), seed=self.random_state)
        return propensity_forward(self.params_, check_features(X), mc).P

    def predict(self, X):
        """Most likely action (argmax of the mean scores)."""
        check_is_fitted(self, "params_")
        X = check_features(X)
        return np.argmax(X @ self.params_.matrix.T, axis=1)

    def score(self, X, y):
        """Expected reward ``mean_i pi(y_i | x_i)`` on labelled data."""
        P = self.predict_proba(X)
        y = np.asarray(y, dtype=np.int64)
        return float(np.mean(P[np.arange(len(y)), y]))
