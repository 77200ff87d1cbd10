"""Seeded multi-domain regression data with controllable distribution shift.

Domain ``z`` has features ``x_t = mu_z + sqrt(1 - f) * s_t + sqrt(f) * e_t``
with a latent state ``s_t`` (unit-variance AR(1) across epochs) and epoch
noise ``e_t ~ N(0, I)``, so ``x_t ~ N(mu_z, I)`` marginally for any feature
noise fraction ``f``. The domain offset ``mu_z ~ marginal_shift * N(0, I)``
is a label-irrelevant baseline. Labels are
``clip(logistic(beta_z . s_t) + noise, 0, 1)`` with
``beta_z = beta_0 + conditional_shift * delta_z`` and ``delta_z ~ N(0, I / d)``.

With ``f = 0`` and no label noise the labels are an exact function of the
features within each domain, and of the features alone when there is no
marginal shift.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datamodel import DomainDataset, save_dataset

COEF_NORM = 0.8


@dataclass(frozen=True)
class GeneratorConfig:
    num_domains: int = 15
    epochs_per_domain: int = 1200
    dim: int = 10
    marginal_shift: float = 1.0
    conditional_shift: float = 0.3
    noise_std: float = 0.05
    seed: int = 0
    temporal_correlation: float = 0.98
    feature_noise: float = 0.3

    def __post_init__(self):
        if min(self.num_domains, self.epochs_per_domain, self.dim) < 1:
            raise ValueError("domain, epoch and dimension counts must be at least 1")
        if min(self.marginal_shift, self.conditional_shift, self.noise_std) < 0:
            raise ValueError("shift and noise scales must be non-negative")
        if not 0 <= self.temporal_correlation < 1:
            raise ValueError("temporal_correlation must lie in [0, 1)")
        if not 0 <= self.feature_noise <= 1:
            raise ValueError("feature_noise must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _latent(rng, n, d, rho):
    s = np.empty((n, d))
    s[0] = rng.standard_normal(d)
    innov = np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        s[t] = rho * s[t - 1] + innov * rng.standard_normal(d)
    return s


def generate_domain(config: GeneratorConfig, index: int, mean=None) -> DomainDataset:
    """Generate domain ``index`` alone; identical to its entry in ``generate``.

    ``mean`` overrides the domain's feature mean (used to build near/far
    source layouts).
    """
    d = config.dim
    shared = np.random.default_rng([config.seed, 0])
    beta0 = COEF_NORM * _unit(shared, d)
    rng = np.random.default_rng([config.seed, 1, index])
    if mean is None:
        mu = config.marginal_shift * rng.standard_normal(d)
    else:
        mu = np.asarray(mean, float)
    delta = rng.standard_normal(d) / np.sqrt(d)
    beta = beta0 + config.conditional_shift * delta
    s = _latent(rng, config.epochs_per_domain, d, config.temporal_correlation)
    e = rng.standard_normal((config.epochs_per_domain, d))
    f = config.feature_noise
    X = mu + np.sqrt(1.0 - f) * s + np.sqrt(f) * e
    y = 1.0 / (1.0 + np.exp(-(s @ beta)))
    y = np.clip(y + config.noise_std * rng.standard_normal(y.size), 0.0, 1.0)
    return DomainDataset(f"d{index:02d}", X, y)


def generate(config: GeneratorConfig) -> list:
    return [generate_domain(config, z) for z in range(config.num_domains)]


def near_far_domains(config: GeneratorConfig, n_near: int = 7, n_far: int = 7,
                     near_shift: float = 0.3, far_shift: float = 8.0):
    """A target plus sources placed near it or far from it in feature mean.

    Returns ``(target, sources, near_ids)``. The target is domain 0 with mean
    ``mu_t``; near sources sit ``near_shift`` away from ``mu_t`` and far
    sources ``far_shift`` away, in random directions.
    """
    rng = np.random.default_rng([config.seed, 2])
    d = config.dim
    mu_t = config.marginal_shift * rng.standard_normal(d)
    target = generate_domain(config, 0, mean=mu_t)
    sources, near = [], []
    for j in range(n_near + n_far):
        shift = near_shift if j < n_near else far_shift
        ds = generate_domain(config, j + 1, mean=mu_t + shift * _unit(rng, d))
        sources.append(ds)
        if j < n_near:
            near.append(ds.id)
    return target, sources, near


def bootstrap_domain(dataset: DomainDataset, rng, id: str) -> DomainDataset:
    """Resample a domain's epochs with replacement to create an extra domain."""
    idx = rng.integers(0, dataset.n_epochs, dataset.n_epochs)
    return DomainDataset(id, dataset.features[idx], dataset.labels[idx])


def write_domains(datasets, out_dir) -> list:
    out_dir = Path(out_dir)
    return [save_dataset(ds, out_dir / f"{ds.id}.csv") for ds in datasets]
