"""Closed-form OwARR base model for one source domain.

The objective for coefficients ``alpha`` on centered stacked data
``X = [X_src; X_tgt]``, ``y = [y_src; y_tgt]`` is::

    (y - X a)' E (y - X a) + lam * a' X' (M_P + M_Q) X a
        + gam * a' X' (I - y y') X a / (y' y)

with ``E = diag(1, ..., 1, w_t, ..., w_t)``. Its stationary point solves
``X' (E + lam M_P + lam M_Q + gam (I - y y') / y'y) X a = X' E y``.

Both MMD matrices are sums of rank-one Gram terms ``u u'``, so the training
path never forms an (n + m) x (n + m) matrix: ``X' u u' X = (X'u)(X'u)'``.
The dense constructors below exist for inspection and for checking the
factored path.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from . import _kernels
from .datamodel import DataError, DomainDataset, Hyperparams
from .fuzzy import MembershipTable, label_memberships

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
JITTER = 1e-8
RMSE_FLOOR = 1e-12


class RankDeficientError(ArithmeticError):
    pass


def target_weight(sigma: float, n: int, m: int) -> float | None:
    """Weight of each target row, ``max(2, sigma * n / m)``; None when m == 0."""
    if m == 0:
        return None
    return max(2.0, sigma * n / m)


def marginal_mmd(n: int, m: int) -> np.ndarray:
    if n < 1 or m < 1:
        raise ValueError("marginal MMD needs at least one row in each domain")
    v = np.concatenate([np.full(n, 1.0 / n), np.full(m, -1.0 / m)])
    return np.outer(v, v)


def _joint_columns(mu_src: MembershipTable, mu_tgt: MembershipTable):
    if mu_src.num_classes != mu_tgt.num_classes:
        raise ValueError(
            f"class count mismatch: {mu_src.num_classes} vs {mu_tgt.num_classes}"
        )
    return mu_src.mu_bar, mu_tgt.mu_bar


def conditional_mmd(mu_src: MembershipTable, mu_tgt: MembershipTable) -> np.ndarray:
    """Dense ``M_Q = sum_c u_c u_c'`` with ``u_c = [mu_src[:, c]; -mu_tgt[:, c]]``.

    A class without support in one domain has an all-zero column there, so
    its term still pulls the other domain's class mean of ``f`` toward zero.
    """
    a, b = _joint_columns(mu_src, mu_tgt)
    U = np.vstack([a, -b])
    return U @ U.T


@dataclass
class SolveInputs:
    """Dense problem description; ``weights`` is the diagonal of E."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    M_P: np.ndarray | None
    M_Q: np.ndarray | None
    lam: float
    gam: float

    @property
    def E(self) -> np.ndarray:
        return np.diag(self.weights)

    def system(self):
        X, y = self.X, self.y
        N = X.shape[0]
        M = np.diag(self.weights).astype(np.float64)
        if self.M_P is not None:
            M = M + self.lam * self.M_P
        if self.M_Q is not None:
            M = M + self.lam * self.M_Q
        yty = float(y @ y)
        if self.gam > 0 and yty > 0:
            M = M + self.gam * (np.eye(N) - np.outer(y, y)) / yty
        return X.T @ M @ X, X.T @ (self.weights * y)


def objective(alpha, inputs: SolveInputs) -> float:
    """Value of the regularized squared-error objective at ``alpha``."""
    X, y = inputs.X, inputs.y
    f = X @ alpha
    r = y - f
    val = float(r @ (inputs.weights * r))
    for M in (inputs.M_P, inputs.M_Q):
        if M is not None:
            val += inputs.lam * float(f @ M @ f)
    yty = float(y @ y)
    if inputs.gam > 0 and yty > 0:
        val += inputs.gam * (float(f @ f) - float(y @ f) ** 2) / yty
    return val


def gradient(alpha, inputs: SolveInputs) -> np.ndarray:
    A, b = inputs.system()
    return 2.0 * (A @ alpha - b)


def _cond_sym(A) -> float:
    """2-norm condition number of a symmetric matrix."""
    if not np.all(np.isfinite(A)):
        return np.inf
    ev = np.abs(np.linalg.eigvalsh(A))
    lo = ev.min()
    return np.inf if lo == 0 else float(ev.max() / lo)


def solve_system(A, b) -> np.ndarray:
    """Symmetric solve with a single jitter retry on ill-conditioning."""
    A = np.asarray(A, dtype=np.float64)
    cond = _cond_sym(A)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        scale = float(np.mean(np.diag(A)))
        A = A + JITTER * scale * np.eye(A.shape[0])
        cond = _cond_sym(A)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise RankDeficientError("rank-deficient design")
        log.debug("jitter %.3g applied to ill-conditioned system", JITTER * scale)
    return scipy.linalg.solve(A, b, assume_a="sym", check_finite=False)


def solve_alpha(inputs: SolveInputs) -> np.ndarray:
    A, b = inputs.system()
    return solve_system(A, b)


def approx_corr(y, yhat) -> float:
    """``(yhat' (y y' - I) yhat) / (y' y)``, evaluated without forming y y'."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    yty = float(y @ y)
    if yty == 0:
        raise ValueError("approximate correlation undefined for a zero label vector")
    return (float(y @ yhat) ** 2 - float(yhat @ yhat)) / yty


@dataclass(frozen=True)
class BaseModel:
    """Linear regressor ``alpha . (x - feature_means) + label_mean``."""

    alpha: np.ndarray
    feature_means: np.ndarray
    label_mean: float
    train_rmse: float
    source_id: str = ""

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.feature_means) @ self.alpha + self.label_mean

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "alpha": [float(a) for a in self.alpha],
            "feature_means": [float(a) for a in self.feature_means],
            "label_mean": float(self.label_mean),
            "train_rmse": float(self.train_rmse),
        }

    @classmethod
    def from_dict(cls, d) -> "BaseModel":
        return cls(np.asarray(d["alpha"], dtype=float),
                   np.asarray(d["feature_means"], dtype=float),
                   float(d["label_mean"]), float(d["train_rmse"]), d.get("source_id", ""))


@dataclass(frozen=True)
class PreparedSource:
    """A source domain with its label memberships computed once."""

    dataset: DomainDataset
    table: MembershipTable | None

    @property
    def id(self) -> str:
        return self.dataset.id

    @cached_property
    def class_means(self):
        """Membership-weighted class means, shape (C, d); None without a table."""
        return None if self.table is None else self.table.mu_bar.T @ self.dataset.features

    @cached_property
    def mean(self) -> np.ndarray:
        return self.dataset.features.mean(axis=0)


def prepare_source(source: DomainDataset, num_fuzzy_sets: int) -> PreparedSource:
    table = label_memberships(source.labels, num_fuzzy_sets)
    if num_fuzzy_sets and table is None:
        log.warning("%s: degenerate label partition, conditional term disabled", source.id)
    return PreparedSource(source, table)


def _membership_blocks(src_table, tgt_table, n, m):
    if src_table is None or tgt_table is None:
        return np.zeros((n, 0)), np.zeros((m, 0))
    return _joint_columns(src_table, tgt_table)


def _stack_rmse(model_alpha, x_mean, y_mean, source, target):
    sq = 0.0
    count = 0
    for ds in (source, target):
        if ds is None:
            continue
        r = ds.labels - ((ds.features - x_mean) @ model_alpha + y_mean)
        sq += float(r @ r)
        count += r.size
    return float(np.sqrt(sq / count))


_UNSET = object()


def train_base(source, target: DomainDataset | None, hp: Hyperparams,
               backend: str | None = None, target_table=_UNSET) -> BaseModel:
    """Train one OwARR base model on a source domain plus target calibration rows.

    ``source`` is a DomainDataset or a PreparedSource. ``target`` is None (or
    an empty selection) when no calibration labels are available yet; then
    only the source squared error and the correlation term remain.
    ``target_table`` optionally supplies the target's label memberships so an
    ensemble computes them once rather than per source.
    """
    prepared = source if isinstance(source, PreparedSource) else prepare_source(
        source, hp.num_fuzzy_sets)
    src = prepared.dataset
    n = src.n_epochs
    if target is not None and target.dim != src.dim:
        raise DataError(f"dimension mismatch: {src.id} has {src.dim}, target {target.dim}")
    m = 0 if target is None else target.n_epochs
    if m:
        wt = target_weight(hp.sigma, n, m)
        tgt_table = (label_memberships(target.labels, hp.num_fuzzy_sets)
                     if target_table is _UNSET else target_table)
        mus, mut = _membership_blocks(prepared.table, tgt_table, n, m)
        Xt, yt = target.features, target.labels
    else:
        wt = 1.0
        mus, mut = np.zeros((n, 0)), np.zeros((0, 0))
        Xt, yt = np.zeros((0, src.dim)), np.zeros(0)
    A, b, x_mean, y_mean, yty = _kernels.assemble(
        src.features, src.labels, Xt, yt, mus, mut, wt, hp.lam, hp.gamma,
        backend=backend)
    if hp.gamma > 0 and yty == 0:
        warnings.warn("constant labels: correlation term skipped", RuntimeWarning, stacklevel=2)
    alpha = solve_system(A, b)
    rmse = _stack_rmse(alpha, x_mean, y_mean, src, target if m else None)
    return BaseModel(alpha, x_mean, y_mean, rmse, src.id)


def build_solve_inputs(source: DomainDataset, target: DomainDataset | None,
                       hp: Hyperparams):
    """Dense SolveInputs with the same centering as ``train_base``.

    Returns ``(inputs, x_mean, y_mean)``. Memory is O((n + m)^2); intended for
    small problems and verification.
    """
    n = source.n_epochs
    m = 0 if target is None else target.n_epochs
    X = source.features if not m else np.vstack([source.features, target.features])
    y = source.labels if not m else np.concatenate([source.labels, target.labels])
    x_mean, y_mean = X.mean(axis=0), float(y.mean())
    weights = np.ones(n + m)
    M_P = M_Q = None
    if m:
        weights[n:] = target_weight(hp.sigma, n, m)
        M_P = marginal_mmd(n, m)
        s_tab = label_memberships(source.labels, hp.num_fuzzy_sets)
        t_tab = label_memberships(target.labels, hp.num_fuzzy_sets)
        if s_tab is not None and t_tab is not None:
            M_Q = conditional_mmd(s_tab, t_tab)
    inputs = SolveInputs(X - x_mean, y - y_mean, weights, M_P, M_Q, hp.lam, hp.gamma)
    return inputs, x_mean, y_mean
