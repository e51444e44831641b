"""Uncertainty scores: global-Gaussian Mahalanobis distance and softmax confidence."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import ValidationError
from .losses import PrototypeBank


class NotPositiveDefiniteError(ValidationError):
    pass


@dataclass
class GaussianHead:
    mean: np.ndarray
    covariance: np.ndarray  # includes the ridge
    precision: np.ndarray
    ridge: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def default_ridge(features) -> float:
    z = np.asarray(features, dtype=float)
    cov = np.cov(z, rowvar=False, bias=True)
    return 1e-6 * float(np.trace(np.atleast_2d(cov))) / z.shape[1]


def fit_gaussian(train_features, ridge: Optional[float] = None) -> GaussianHead:
    """Fit mean and (biased) covariance of the training features.

    ``ridge`` is added to the diagonal; ``None`` picks
    ``1e-6 * trace(cov) / d``.  Unit-norm embeddings lie on a sphere, so their
    covariance is singular without it.
    """
    z = np.asarray(train_features, dtype=float)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValidationError("train_features: expected a non-empty M x d matrix")
    if ridge is None:
        ridge = default_ridge(z)
    if ridge < 0:
        raise ValidationError("ridge: must be >= 0")
    mu = z.mean(axis=0)
    c = z - mu
    cov = c.T @ c / z.shape[0] + ridge * np.eye(z.shape[1])
    try:
        factor = cho_factor(cov, lower=True)
    except LinAlgError:
        raise NotPositiveDefiniteError(
            f"covariance is not positive definite with ridge={ridge:g}; use a larger ridge"
        ) from None
    if np.any(np.diag(factor[0]) <= 0):
        raise NotPositiveDefiniteError(
            f"covariance is not positive definite with ridge={ridge:g}; use a larger ridge")
    precision = cho_solve(factor, np.eye(z.shape[1]))
    precision = (precision + precision.T) / 2
    return GaussianHead(mu, cov, precision, float(ridge))


def mahalanobis_score(head: GaussianHead, z) -> np.ndarray | float:
    """Squared Mahalanobis distance ``(z - mu)^T Sigma^-1 (z - mu)``.

    Works on a single vector or row-wise on a matrix.
    """
    z = np.asarray(z, dtype=float)
    c = z - head.mean
    u = np.einsum("...i,ij,...j->...", c, head.precision, c)
    u = np.maximum(u, 0.0)
    return float(u) if u.ndim == 0 else u


def softmax_uncertainty(z, bank: PrototypeBank, tau: float) -> np.ndarray | float:
    """``1 - max_j softmax(z.k_j / tau)``."""
    logits = np.asarray(z, dtype=float) @ bank.prototypes.T / tau
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    p_max = 1.0 / e.sum(axis=-1)  # the max entry is exp(0) = 1
    u = 1.0 - p_max
    return float(u) if np.ndim(u) == 0 else u


def percentile_threshold(train_scores, q: float = 95.0) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest score."""
    s = np.sort(np.asarray(train_scores, dtype=float).ravel())
    if s.size == 0:
        raise ValidationError("train_scores: empty; cannot compute a threshold")
    rank = max(1, math.ceil(q / 100.0 * s.size))
    return float(s[rank - 1])


def one_threshold_binarize(scores, threshold: float) -> np.ndarray:
    """1 where score > threshold, else 0."""
    return (np.asarray(scores, dtype=float) > threshold).astype(int)
