"""Ridge baselines and inverse-training-RMSE model fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import _UNSET, RMSE_FLOOR, BaseModel, solve_system, train_base
from .datamodel import DataError, DomainDataset, Hyperparams, check_compatible
from .fuzzy import label_memberships


class CalibrationError(ValueError):
    """Raised when an algorithm needs calibration data that is not there."""


@dataclass(frozen=True)
class Member:
    model: BaseModel
    weight: float
    feature_params: object = None


@dataclass(frozen=True)
class EnsembleModel:
    members: tuple = field(default_factory=tuple)

    @property
    def normalization(self) -> float:
        return float(sum(mb.weight for mb in self.members))

    @property
    def weights(self) -> np.ndarray:
        return np.array([mb.weight for mb in self.members])

    def member_predictions(self, X) -> np.ndarray:
        """Predictions of every member, shape ``(n_members, n_rows)``.

        Members carrying feature parameters map ``X`` (raw band powers)
        through their own extraction first.
        """
        rows = []
        for mb in self.members:
            if mb.feature_params is not None:
                from .signal import apply_feature_params
                rows.append(mb.model.predict(apply_feature_params(mb.feature_params, X)))
            else:
                rows.append(mb.model.predict(X))
        return np.vstack(rows)

    def predict(self, X) -> np.ndarray:
        P = self.member_predictions(X)
        w = self.weights
        return (w / w.sum()) @ P


def fuse(models, feature_params=None) -> EnsembleModel:
    """Weight each model by ``1 / max(train_rmse, floor)``."""
    models = list(models)
    if not models:
        raise ValueError("cannot fuse an empty model list")
    if feature_params is None:
        feature_params = [None] * len(models)
    members = tuple(
        Member(mdl, 1.0 / max(mdl.train_rmse, RMSE_FLOOR), fp)
        for mdl, fp in zip(models, feature_params)
    )
    return EnsembleModel(members)


def _rmse(model: BaseModel, X, y) -> float:
    r = y - model.predict(X)
    return float(np.sqrt(np.mean(r * r)))


def ridge_train(X, y, rho: float, source_id: str = "", sample_weight=None) -> BaseModel:
    """Ridge regression on centered data; the intercept is not penalized."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise DataError("ridge regression needs at least one row")
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    d = X.shape[1]
    if sample_weight is None:
        A, b, x_mean, y_mean, _ = _kernels.assemble(
            X, y, np.zeros((0, d)), np.zeros(0), np.zeros((X.shape[0], 0)),
            np.zeros((0, 0)), 1.0, 0.0, 0.0)
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
        x_mean = (w @ X) / w.sum()
        y_mean = float(w @ y / w.sum())
        Xc, yc = X - x_mean, y - y_mean
        A = (Xc * w[:, None]).T @ Xc
        b = Xc.T @ (w * yc)
    alpha = solve_system(A + rho * np.eye(d), b)
    model = BaseModel(alpha, x_mean, float(y_mean), 0.0, source_id)
    return BaseModel(alpha, x_mean, float(y_mean), _rmse(model, X, y), source_id)


def bl1_train(sources, hp: Hyperparams) -> BaseModel:
    """Subject-independent ridge on all source rows pooled."""
    sources = list(sources)
    if not sources:
        raise ValueError("BL1 needs at least one source domain")
    check_compatible(sources)
    X = np.vstack([s.features for s in sources])
    y = np.concatenate([s.labels for s in sources])
    return ridge_train(X, y, hp.ridge, "BL1")


def bl2_train(target: DomainDataset | None, hp: Hyperparams) -> BaseModel:
    """Subject-specific ridge on the calibration rows only."""
    if target is None or target.n_epochs == 0:
        raise CalibrationError("BL2 undefined without calibration data")
    return ridge_train(target.features, target.labels, hp.ridge, "BL2")


def damf_train(sources, target: DomainDataset | None, hp: Hyperparams,
               target_weight: float = 1.0) -> EnsembleModel:
    """One ridge model per source stacked with the calibration rows, fused.

    ``target_weight`` is the row weight given to calibration rows inside
    every stack (1 gives the plain concatenation).
    """
    sources = list(sources)
    if not sources:
        raise ValueError("DAMF needs at least one source domain")
    check_compatible(sources + ([target] if target is not None else []))
    models = []
    for src in sources:
        if target is None or target.n_epochs == 0:
            models.append(ridge_train(src.features, src.labels, hp.ridge, src.id))
            continue
        d = src.dim
        n, m = src.n_epochs, target.n_epochs
        A, b, x_mean, y_mean, _ = _kernels.assemble(
            src.features, src.labels, target.features, target.labels,
            np.zeros((n, 0)), np.zeros((m, 0)), target_weight, 0.0, 0.0)
        alpha = solve_system(A + hp.ridge * np.eye(d), b)
        model = BaseModel(alpha, x_mean, y_mean, 0.0, src.id)
        X = np.vstack([src.features, target.features])
        y = np.concatenate([src.labels, target.labels])
        models.append(BaseModel(alpha, x_mean, y_mean, _rmse(model, X, y), src.id))
    return fuse(models)


def owarr_train(sources, target: DomainDataset | None, hp: Hyperparams,
                feature_params=None, backend: str | None = None,
                target_table=_UNSET) -> EnsembleModel:
    """Train one adapted base model per source domain and fuse them.

    ``sources`` may hold DomainDataset or PreparedSource items; preparing
    them once avoids recomputing source memberships on every call.
    ``target_table`` passes in target memberships that are already known.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("OwARR needs at least one source domain")
    table = None if target_table is _UNSET else target_table
    if target_table is _UNSET and target is not None and target.n_epochs:
        table = label_memberships(target.labels, hp.num_fuzzy_sets)
    models = [train_base(src, target, hp, backend=backend, target_table=table)
              for src in sources]
    return fuse(models, feature_params)


def owarr_train_pairs(pairs, hp: Hyperparams, backend: str | None = None) -> EnsembleModel:
    """OwARR over per-pair feature spaces.

    ``pairs`` holds ``(source, target_calibration, feature_params)`` triples in
    which each source and its target view share the features produced by
    ``feature_params``. The returned model predicts from raw band powers.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("OwARR needs at least one source domain")
    models = [train_base(src, tgt, hp, backend=backend) for src, tgt, _ in pairs]
    return fuse(models, [fp for _, _, fp in pairs])
