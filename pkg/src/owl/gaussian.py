"""Gaussian components and per-class mixtures scored in log space."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianComponent:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float = 1.0
    log_norm_const: float = field(init=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance shape {self.covariance.shape} does not match dim {d}")
        self._chol = np.linalg.cholesky(self.covariance)
        logdet = 2.0 * float(np.log(np.diag(self._chol)).sum())
        self.log_norm_const = -0.5 * (d * LOG_2PI + logdet)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = solve_triangular(self._chol, (x - self.mean).T, lower=True, check_finite=False)
        return self.log_norm_const - 0.5 * np.einsum("ij,ij->j", y, y)


def default_epsilon(cov: np.ndarray) -> float:
    d = cov.shape[0]
    return 1e-6 * max(1.0, float(np.trace(cov)) / d)


def fit_gaussian(points, reg_epsilon: float | None = None, diagonal: bool = False,
                 weight: float = 1.0) -> GaussianComponent:
    """Sample mean and unbiased covariance, ridge-regularized so Cholesky succeeds."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if x.shape[0] < 1:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in points")
    n, d = x.shape
    mean = x.mean(axis=0)
    if n == 1:
        cov = np.zeros((d, d))
    else:
        diff = x - mean
        cov = diff.T @ diff / (n - 1)
        if diagonal:
            cov = np.diag(np.diag(cov))
    eps = default_epsilon(cov) if reg_epsilon is None else reg_epsilon
    eye = np.eye(d)
    for _ in range(8):
        try:
            return GaussianComponent(mean, cov + eps * eye, weight)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise np.linalg.LinAlgError("covariance not factorizable after regularization")


@dataclass
class ClassModel:
    label: str
    components: list[GaussianComponent]

    def __post_init__(self):
        if not self.components:
            raise ValueError(f"class model {self.label!r} needs at least one component")

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[1]}")
        parts = np.stack([math.log(c.weight) + c.log_density(x) for c in self.components])
        return logsumexp(parts, axis=0)


def gmm_log_prob(model: ClassModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise ValueError(f"expected a vector of dimension {model.dim}")
    return float(model.log_prob(x[None, :])[0])


def fit_class_model(label: str, points: np.ndarray, partition: np.ndarray,
                    diagonal: bool = False) -> ClassModel:
    """One Gaussian per cluster of the partition, weighted by cluster size."""
    n = len(partition)
    comps = []
    for k in range(int(partition.max()) + 1):
        members = points[partition == k]
        if len(members):
            comps.append(fit_gaussian(members, diagonal=diagonal, weight=len(members) / n))
    return ClassModel(label, comps)
