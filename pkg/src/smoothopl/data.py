"""Datasets, CSV I/O, synthetic generators and supervised-to-bandit conversion.

Action indices are zero-based everywhere in this module. Costs follow the
convention ``c = -reward`` so that they live in ``[-1, 0]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_scalar_in

__all__ = [
    "DataFormatError",
    "SupervisedExample",
    "SupervisedDataset",
    "LoggedInteraction",
    "LoggedDataset",
    "Fig1Spec",
    "BlobSpec",
    "normalize_rows",
    "load_supervised_csv",
    "save_supervised_csv",
    "load_logged_csv",
    "save_logged_csv",
    "generate_blobs",
    "convert_to_bandit",
    "evaluate_policy_reward",
    "generate_fig1_bandit",
]

_SUM_TOL = 1e-9


class DataFormatError(ValueError):
    """Raised when a dataset file or array violates the expected format."""


def _freeze(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def normalize_rows(X):
    """Scale each row of ``X`` to unit L2 norm.

    Raises
    ------
    DataFormatError
        If a row is the zero vector or contains non-finite values.
    """
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        bad = int(np.where(~np.all(np.isfinite(X), axis=1))[0][0])
        raise DataFormatError(f"non-finite feature vector at index {bad}")
    norms = np.linalg.norm(X, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise DataFormatError(f"zero feature vector at index {int(zero[0])}")
    return X / norms[:, None]


@dataclass(frozen=True)
class SupervisedExample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class SupervisedDataset:
    """Classification data with unit-norm features.

    Attributes
    ----------
    X : ndarray of shape (n, d)
    y : ndarray of shape (n,), integer labels in ``[0, K)``
    K : int
    """

    X: np.ndarray
    y: np.ndarray
    K: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataFormatError("X must be a non-empty 2-d array")
        if y.shape != (X.shape[0],):
            raise DataFormatError("y must have one label per row of X")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise DataFormatError("labels must be integers")
        y = y.astype(np.int64)
        if self.K < 1 or y.min() < 0 or y.max() >= self.K:
            raise DataFormatError(f"labels must lie in [0, {self.K})")
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "K", int(self.K))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return SupervisedExample(self.X[i], int(self.y[i]))

    def subset(self, idx):
        idx = np.asarray(idx)
        return SupervisedDataset(self.X[idx], self.y[idx], self.K)


@dataclass(frozen=True)
class LoggedInteraction:
    features: np.ndarray
    action: int
    cost: float
    logging_propensities: np.ndarray


@dataclass(frozen=True)
class LoggedDataset:
    """Logged bandit feedback with the full logging propensity vectors.

    Attributes
    ----------
    X : ndarray of shape (n, d)
    actions : ndarray of shape (n,)
    costs : ndarray of shape (n,), values in ``[-1, 0]``
    propensities : ndarray of shape (n, K)
        Logging probabilities ``pi_0(a | x_i)`` for every action.
    """

    X: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    propensities: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        a = np.asarray(self.actions)
        c = np.asarray(self.costs, dtype=np.float64)
        P = np.asarray(self.propensities, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DataFormatError("logged dataset must be non-empty with 2-d features")
        n = X.shape[0]
        if a.shape != (n,) or c.shape != (n,) or P.ndim != 2 or P.shape[0] != n:
            raise DataFormatError("actions, costs and propensities must have one entry per row")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.mod(a, 1) == 0):
                raise DataFormatError("actions must be integers")
        a = a.astype(np.int64)
        K = P.shape[1]
        if a.min() < 0 or a.max() >= K:
            raise DataFormatError(f"actions must lie in [0, {K})")
        if not (np.all(np.isfinite(c)) and np.all(c >= -1.0) and np.all(c <= 0.0)):
            raise DataFormatError("costs must lie in [-1, 0]")
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise DataFormatError("propensities must be finite and nonnegative")
        sums = P.sum(axis=1)
        bad = np.where(np.abs(sums - 1.0) > _SUM_TOL)[0]
        if bad.size:
            raise DataFormatError(f"propensity vector at index {int(bad[0])} does not sum to 1")
        zero = np.where(P[np.arange(n), a] <= 0)[0]
        if zero.size:
            raise DataFormatError(f"logged action has zero propensity at index {int(zero[0])}")
        for name, val in (("X", X), ("actions", a), ("costs", c), ("propensities", P)):
            object.__setattr__(self, name, _freeze(val))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def K(self):
        return self.propensities.shape[1]

    @property
    def logged_propensities(self):
        """``pi_0(a_i | x_i)`` for each logged action."""
        return self.propensities[np.arange(self.n), self.actions]

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return LoggedInteraction(self.X[i], int(self.actions[i]), float(self.costs[i]), self.propensities[i])

    def subset(self, idx):
        idx = np.asarray(idx)
        return LoggedDataset(self.X[idx], self.actions[idx], self.costs[idx], self.propensities[idx])


@dataclass(frozen=True)
class Fig1Spec:
    """Non-contextual example with a sharply peaked logging policy.

    ``center`` is zero-based. The mean reward of action ``a`` (zero-based) is
    ``0.1 - 1e-3 * a``.
    """

    n_samples: int = 50_000
    n_actions: int = 100
    eps: float = 0.05
    center: int = 49

    def __post_init__(self):
        if self.n_actions < 2 or self.n_samples < 1:
            raise ValueError("need n_actions >= 2 and n_samples >= 1")
        if not 0 <= self.center < self.n_actions:
            raise ValueError("center out of range")
        check_scalar_in(self.eps, "eps", 0.0, 1.0, low_inclusive=False, high_inclusive=False)
        if np.any(self.rewards() <= 0):
            raise ValueError("mean rewards must stay positive; use at most 100 actions")

    def rewards(self):
        return 0.1 - 1e-3 * np.arange(self.n_actions)

    def reward_fn(self, a):
        return 0.1 - 1e-3 * np.asarray(a)

    def logging_propensities(self):
        p = np.full(self.n_actions, self.eps / (self.n_actions - 1))
        p[self.center] = 1.0 - self.eps
        # Absorb rounding in the peak so that the vector sums to one exactly.
        for _ in range(8):
            gap = 1.0 - p.sum()
            if gap == 0.0:
                break
            p[self.center] += gap
        return p


@dataclass(frozen=True)
class BlobSpec:
    """Gaussian clusters on the unit sphere.

    Cluster means are ``(class_sep / sqrt(2)) * e_k`` when ``d >= K`` so that
    every pair of means is exactly ``class_sep`` apart; when ``d < K`` they are
    drawn once from a fixed stream keyed by ``(K, d)`` and rescaled to that
    radius. Means never depend on ``seed``, so train and test sets drawn with
    different seeds share a distribution.
    """

    K: int = 10
    d: int = 20
    n: int = 1000
    class_sep: float = 1.0
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.K < 2 or self.d < 1 or self.n < 1:
            raise ValueError("BlobSpec requires K >= 2, d >= 1, n >= 1")
        check_scalar_in(self.class_sep, "class_sep", 0.0, low_inclusive=False)
        check_scalar_in(self.noise_sd, "noise_sd", 0.0, low_inclusive=False)

    def means(self):
        radius = self.class_sep / np.sqrt(2.0)
        if self.d >= self.K:
            M = np.zeros((self.K, self.d))
            M[np.arange(self.K), np.arange(self.K)] = radius
            return M
        rng = np.random.default_rng([self.K, self.d])
        M = rng.standard_normal((self.K, self.d))
        return radius * M / np.linalg.norm(M, axis=1, keepdims=True)


# ----------------------------------------------------------------------------
# CSV I/O


def _header_comment(meta):
    return "# " + json.dumps(meta, sort_keys=True)


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    meta = {}
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    while body_start < len(lines) and lines[body_start].startswith("#"):
        text = lines[body_start][1:].strip()
        if body_start == 0 and text.startswith("{"):
            try:
                meta = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line 1: malformed header comment: {exc}") from None
        body_start += 1
    if body_start >= len(lines):
        raise DataFormatError(f"{path}: missing header row")
    reader = csv.reader(lines[body_start:])
    header = next(reader)
    rows = []
    for offset, row in enumerate(reader):
        lineno = body_start + 2 + offset
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field") from None
    first_line = body_start + 2
    return meta, header, np.array(rows, dtype=np.float64).reshape(-1, len(header)), first_line


def _feature_count(header, stop):
    d = 0
    while d < len(header) and header[d] == f"f{d}":
        d += 1
    if d == 0 or header[d] != stop:
        raise DataFormatError(f"header must be f0..f{{d-1}},{stop}...")
    return d


def _as_int_column(col, name, first_line):
    if not np.all(np.mod(col, 1) == 0):
        bad = int(np.where(np.mod(col, 1) != 0)[0][0])
        raise DataFormatError(f"line {first_line + bad}: {name} must be an integer")
    return col.astype(np.int64)


def load_supervised_csv(path):
    """Read a supervised CSV (``f0..f{d-1},label``) and L2-normalize features.

    ``K`` is taken from the JSON header comment when present, otherwise as
    ``max(label) + 1``.
    """
    meta, header, table, first = _read_table(path)
    d = _feature_count(header, "label")
    if len(header) != d + 1:
        raise DataFormatError("supervised header must end with 'label'")
    if table.shape[0] == 0:
        raise DataFormatError("dataset is empty")
    y = _as_int_column(table[:, d], "label", first)
    neg = np.where(y < 0)[0]
    if neg.size:
        raise DataFormatError(f"line {first + int(neg[0])}: label {y[neg[0]]} out of range")
    K = int(meta.get("K", y.max() + 1))
    over = np.where(y >= K)[0]
    if over.size:
        raise DataFormatError(f"line {first + int(over[0])}: label {y[over[0]]} out of range [0, {K})")
    try:
        X = normalize_rows(table[:, :d])
    except DataFormatError as exc:
        raise DataFormatError(f"{exc} (data row index)") from None
    return SupervisedDataset(X, y, K)


def save_supervised_csv(ds, path, extra_meta=None):
    meta = {"n": ds.n, "d": ds.d, "K": ds.K}
    if extra_meta:
        meta.update(extra_meta)
    with Path(path).open("w", newline="") as fh:
        fh.write(_header_comment(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.d)] + ["label"])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def save_logged_csv(ds, path, extra_meta=None):
    """Write a logged dataset with round-trip exact float formatting."""
    meta = {"n": ds.n, "d": ds.d, "K": ds.K}
    if extra_meta:
        meta.update(extra_meta)
    with Path(path).open("w", newline="") as fh:
        fh.write(_header_comment(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.d)] + ["action", "cost"] + [f"p{k}" for k in range(ds.K)])
        for i in range(ds.n):
            w.writerow(
                [repr(float(v)) for v in ds.X[i]]
                + [int(ds.actions[i]), repr(float(ds.costs[i]))]
                + [repr(float(p)) for p in ds.propensities[i]]
            )


def load_logged_csv(path):
    meta, header, table, first = _read_table(path)
    d = _feature_count(header, "action")
    if len(header) < d + 3 or header[d + 1] != "cost":
        raise DataFormatError("logged header must be f0..,action,cost,p0..")
    K = len(header) - d - 2
    if header[d + 2:] != [f"p{k}" for k in range(K)]:
        raise DataFormatError("propensity columns must be p0..p{K-1}")
    if "K" in meta and int(meta["K"]) != K:
        raise DataFormatError("header comment K does not match propensity columns")
    if table.shape[0] == 0:
        raise DataFormatError("dataset is empty")
    actions = _as_int_column(table[:, d], "action", first)
    return LoggedDataset(table[:, :d], actions, table[:, d + 1], table[:, d + 2:])


# ----------------------------------------------------------------------------
# Generators


def generate_blobs(spec: BlobSpec) -> SupervisedDataset:
    """Balanced Gaussian clusters, shuffled, with unit-norm features."""
    rng = np.random.default_rng(spec.seed)
    counts = np.full(spec.K, spec.n // spec.K)
    counts[: spec.n % spec.K] += 1
    y = np.repeat(np.arange(spec.K), counts)
    X = spec.means()[y] + spec.noise_sd * rng.standard_normal((spec.n, spec.d))
    perm = rng.permutation(spec.n)
    X, y = X[perm], y[perm]
    # A zero row has probability zero; nudge rather than fail on it.
    zero = np.linalg.norm(X, axis=1) == 0
    X[zero, 0] = 1.0
    return SupervisedDataset(normalize_rows(X), y, spec.K)


def convert_to_bandit(ds: SupervisedDataset, logging, seed, mc=None) -> LoggedDataset:
    """Sample ``a_i ~ pi_0(. | x_i)`` and reveal ``c_i = -1{a_i = y_i}``.

    Parameters
    ----------
    ds : SupervisedDataset
    logging : policy parameters (softmax, Gaussian or mixed-logit)
    seed : int
    mc : McConfig, optional
        Monte Carlo settings for the stored propensities of non-softmax
        logging policies.
    """
    from .policies import propensities as _propensities

    _check_dim(ds, logging)
    P = _propensities(logging, ds.X, mc)
    rng = np.random.default_rng(seed)
    u = rng.random(ds.n)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    actions = (u[:, None] >= cdf).sum(axis=1)
    # Guard against landing on a zero-probability action through rounding.
    zero = P[np.arange(ds.n), actions] <= 0
    if np.any(zero):
        actions[zero] = P[zero].argmax(axis=1)
    costs = -(actions == ds.y).astype(np.float64)
    return LoggedDataset(ds.X, actions, costs, P)


def evaluate_policy_reward(ds: SupervisedDataset, policy, seed, repeats=1) -> float:
    """Mean of ``1{a_i = y_i}`` with ``a_i`` drawn from ``policy``.

    Actions are sampled exactly (argmax of perturbed scores for Gaussian and
    mixed-logit policies), so no Monte Carlo propensity error enters.
    """
    from .policies import sample_actions

    _check_dim(ds, policy)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(repeats):
        a = sample_actions(policy, ds.X, rng)
        hits += int(np.sum(a == ds.y))
    return hits / (ds.n * repeats)


def _check_dim(ds, params):
    K, d = params.matrix.shape
    if d != ds.d or K != ds.K:
        raise ValueError(f"policy shape ({K}, {d}) does not match dataset (K={ds.K}, d={ds.d})")


def generate_fig1_bandit(spec: Fig1Spec, seed) -> LoggedDataset:
    """Draw ``n_samples`` rounds of the non-contextual peaked-logging example."""
    rng = np.random.default_rng(seed)
    p0 = spec.logging_propensities()
    actions = rng.choice(spec.n_actions, size=spec.n_samples, p=p0)
    rewards = (rng.random(spec.n_samples) < spec.rewards()[actions]).astype(np.float64)
    X = np.ones((spec.n_samples, 1))
    P = np.broadcast_to(p0, (spec.n_samples, spec.n_actions))
    return LoggedDataset(X, actions, -rewards, P)
