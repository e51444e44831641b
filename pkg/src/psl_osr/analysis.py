"""Representation analytics: covariance spectrum, class statistics, histograms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .losses import PrototypeBank
from .metrics import ScoreSet

LOG_FLOOR = 1e-300


def covariance_matrix(features) -> np.ndarray:
    """Biased covariance ``(1/M) sum (z - zbar)(z - zbar)^T``."""
    z = np.asarray(features, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValidationError("features: need an M x d matrix with M >= 2")
    c = z - z.mean(axis=0)
    cov = c.T @ c / z.shape[0]
    return (cov + cov.T) / 2


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    log_values: np.ndarray
    dim: int
    sample_count: int | None = None
    U: np.ndarray | None = field(default=None, repr=False)
    Vt: np.ndarray | None = field(default=None, repr=False)

    def rows(self):
        for i, (v, lv) in enumerate(zip(self.singular_values, self.log_values)):
            yield {"rank": i + 1, "value": float(v), "log_value": float(lv)}


def singular_spectrum(cov, sample_count: int | None = None, sym_tol: float = 1e-9) -> SpectrumReport:
    """Singular values of a covariance matrix, descending, with floored logs."""
    c = np.asarray(cov, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValidationError("cov: expected a square matrix")
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    if np.max(np.abs(c - c.T)) > sym_tol * scale:
        raise ValidationError("cov: matrix is not symmetric")
    u, sv, vt = np.linalg.svd(c)
    return SpectrumReport(sv, np.log(np.maximum(sv, LOG_FLOOR)), c.shape[0], sample_count, u, vt)


@dataclass
class GroupStats:
    group: int
    count: int
    sim_proto: float
    sim_mean: float
    variance: float | None  # None when the group has < 2 members


@dataclass
class ClassStats:
    ind: list[GroupStats]
    ood: list[GroupStats]

    @staticmethod
    def _pool(groups, key):
        vals = [getattr(g, key) for g in groups if getattr(g, key) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        """Pooled values in the InD/OoD x Mean/Variance layout."""
        return {
            "ind_mean": self._pool(self.ind, "sim_mean"),
            "ind_variance": self._pool(self.ind, "variance"),
            "ood_mean": self._pool(self.ood, "sim_mean"),
            "ood_variance": self._pool(self.ood, "variance"),
            "ind_sim_proto": self._pool(self.ind, "sim_proto"),
        }

    @property
    def flagged(self) -> list[tuple[str, int]]:
        return [("ind", g.group) for g in self.ind if g.variance is None] + \
               [("ood", g.group) for g in self.ood if g.variance is None]


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def class_similarity_stats(features, labels, predicted_labels, bank: PrototypeBank,
                           is_ood) -> ClassStats:
    """Per-group cosine similarity to class mean and prototype, and feature variance.

    InD rows are grouped by true label.  OoD rows are grouped by predicted
    label and compared against the mean of the InD rows of that class.
    """
    z = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    pred = np.asarray(predicted_labels)
    ood = np.asarray(is_ood, dtype=bool)
    ind_means = {}
    ind_groups = []
    for c in np.unique(labels[~ood]):
        zc = z[~ood & (labels == c)]
        mean = zc.mean(axis=0)
        ind_means[int(c)] = mean
        ind_groups.append(_group(int(c), zc, mean, bank.prototypes[int(c)]))
    ood_groups = []
    for c in np.unique(pred[ood]):
        zc = z[ood & (pred == c)]
        mean = ind_means.get(int(c))
        if mean is None:
            continue
        ood_groups.append(_group(int(c), zc, mean, bank.prototypes[int(c)]))
    return ClassStats(ind_groups, ood_groups)


def _group(c, zc, mean, proto) -> GroupStats:
    return GroupStats(
        group=c,
        count=len(zc),
        sim_proto=float(np.mean(zc @ proto)),
        sim_mean=float(np.mean(zc @ _unit(mean))),
        variance=float(zc.var(axis=0).mean()) if len(zc) >= 2 else None,
    )


def per_class_uncertainty(scores: ScoreSet, classes=None) -> list[dict]:
    """Mean, min, quartiles and max of uncertainty per class label."""
    if scores.true_label is None:
        raise ValidationError("scores: per-class table needs a class for every record")
    labels = scores.true_label.astype(int)
    rows = []
    wanted = np.unique(labels) if classes is None else classes
    for c in wanted:
        u = scores.uncertainty[labels == c]
        if u.size == 0:
            continue
        q1, med, q3 = np.percentile(u, [25, 50, 75])
        rows.append({
            "class": int(c),
            "is_ood": bool(scores.is_ood[labels == c][0]),
            "count": int(u.size),
            "mean": float(u.mean()),
            "min": float(u.min()),
            "q1": float(q1),
            "median": float(med),
            "q3": float(q3),
            "max": float(u.max()),
        })
    return rows


@dataclass
class Histogram:
    edges: np.ndarray
    ind_counts: np.ndarray
    ood_counts: np.ndarray
    degenerate: bool = False

    def rows(self):
        for i in range(len(self.ind_counts)):
            yield {"bin_low": float(self.edges[i]), "bin_high": float(self.edges[i + 1]),
                   "ind_count": int(self.ind_counts[i]), "ood_count": int(self.ood_counts[i])}


def uncertainty_histogram(scores: ScoreSet, bins: int = 20) -> Histogram:
    """Jointly min-max normalise uncertainties, then bin InD and OoD separately.

    All-equal scores cannot be normalised; everything lands in the first bin
    and the result is flagged ``degenerate``.
    """
    if bins < 2:
        raise ValidationError("bins: must be >= 2")
    u = scores.uncertainty
    lo, hi = float(u.min()), float(u.max())
    edges = np.linspace(0.0, 1.0, bins + 1)
    if hi == lo:
        idx = np.zeros(len(u), dtype=int)
        degenerate = True
    else:
        x = (u - lo) / (hi - lo)
        idx = np.minimum((x * bins).astype(int), bins - 1)
        degenerate = False
    ind = np.bincount(idx[~scores.is_ood], minlength=bins)
    ood = np.bincount(idx[scores.is_ood], minlength=bins)
    return Histogram(edges, ind, ood, degenerate)
