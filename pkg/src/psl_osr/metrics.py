"""Open-set (OoD = positive) and closed-set metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


@dataclass
class ScoreSet:
    uncertainty: np.ndarray
    is_ood: np.ndarray
    true_label: Optional[np.ndarray] = None
    predicted_label: Optional[np.ndarray] = None
    sample_id: Optional[np.ndarray] = None

    def __post_init__(self):
        self.uncertainty = np.asarray(self.uncertainty, dtype=float).ravel()
        self.is_ood = np.asarray(self.is_ood, dtype=bool).ravel()
        n = len(self.uncertainty)
        if len(self.is_ood) != n:
            raise ValidationError("is_ood: length must match uncertainty")
        for name in ("true_label", "predicted_label", "sample_id"):
            val = getattr(self, name)
            if val is not None:
                val = np.asarray(val).ravel()
                if len(val) != n:
                    raise ValidationError(f"{name}: length must match uncertainty")
                setattr(self, name, val)

    def __len__(self) -> int:
        return len(self.uncertainty)

    def subset(self, idx) -> "ScoreSet":
        pick = lambda a: None if a is None else a[idx]
        return ScoreSet(self.uncertainty[idx], self.is_ood[idx], pick(self.true_label),
                        pick(self.predicted_label), pick(self.sample_id))

    def with_scores(self, scores) -> "ScoreSet":
        return ScoreSet(scores, self.is_ood, self.true_label, self.predicted_label,
                        self.sample_id)


def _split(scores: ScoreSet):
    u, pos = scores.uncertainty, scores.is_ood
    if pos.all() or not pos.any():
        raise ValidationError("scores: need at least one InD and one OoD record")
    return u, pos


def _curve(scores: ScoreSet):
    """TP and FP counts at every distinct threshold, highest score first."""
    u, pos = _split(scores)
    order = np.argsort(-u, kind="mergesort")
    u, pos = u[order], pos[order]
    last = np.r_[np.nonzero(np.diff(u))[0], len(u) - 1]  # last index of each tie group
    tp = np.cumsum(pos)[last]
    fp = np.cumsum(~pos)[last]
    return tp, fp, int(pos.sum()), int((~pos).sum())


def auroc(scores: ScoreSet) -> float:
    """Mann-Whitney estimate P(u_ood > u_ind) + P(tie) / 2, via midranks."""
    u, pos = _split(scores)
    r = rankdata(u)  # average ranks handle ties
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    stat = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(stat / (n_pos * n_neg))


def aupr(scores: ScoreSet) -> float:
    """Step-wise area under the PR curve: sum of precision x recall increments."""
    tp, fp, n_pos, _ = _curve(scores)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return float(np.sum(precision * d_recall))


def fpr_at_tpr(scores: ScoreSet, tpr_target: float = 0.95) -> float:
    """FPR at the first operating point (highest threshold) whose TPR reaches the target."""
    if not 0 < tpr_target <= 1:
        raise ValidationError("tpr_target: must lie in (0, 1]")
    tp, fp, n_pos, n_neg = _curve(scores)
    tpr = tp / n_pos
    # small tolerance so that e.g. 19/20 counts as reaching 0.95
    i = int(np.argmax(tpr >= tpr_target - 1e-12))
    return float(fp[i] / n_neg)


def closed_set_accuracy(scores: ScoreSet) -> float:
    ind = ~scores.is_ood
    if scores.true_label is None or scores.predicted_label is None:
        raise ValidationError("scores: closed-set accuracy needs true and predicted labels")
    t, p = scores.true_label[ind], scores.predicted_label[ind]
    if t.size == 0:
        raise ValidationError("scores: no InD records")
    if any(v is None for v in t) or any(v is None for v in p):
        raise ValidationError("scores: InD record without a label")
    return float(np.mean(t.astype(int) == p.astype(int)))


@dataclass
class MetricsReport:
    auroc: float
    aupr: float
    fpr95: float
    closed_set_acc: Optional[float]
    protocol: str = "all_thresholds"
    splits: int = 1
    per_split: list = field(default_factory=list)
    threshold: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(**data)


def evaluate(scores: ScoreSet, protocol: str = "all_thresholds") -> MetricsReport:
    acc = None
    if scores.true_label is not None and scores.predicted_label is not None:
        acc = closed_set_accuracy(scores)
    return MetricsReport(auroc(scores), aupr(scores), fpr_at_tpr(scores), acc, protocol)


def split_evaluate(scores: ScoreSet, k: int, seed: int = 0,
                   protocol: str = "all_thresholds") -> MetricsReport:
    """Evaluate the full InD set against each of ``k`` random OoD splits; report means."""
    ood_idx = np.nonzero(scores.is_ood)[0]
    ind_idx = np.nonzero(~scores.is_ood)[0]
    if k < 1 or k > len(ood_idx):
        raise ValidationError(f"splits: k must lie in [1, {len(ood_idx)}], got {k}")
    if k == 1:
        rep = evaluate(scores, protocol)
        rep.per_split = [_split_row(0, rep)]
        return rep
    rng = np.random.default_rng(seed)
    chunks = np.array_split(rng.permutation(ood_idx), k)
    reports = [evaluate(scores.subset(np.sort(np.r_[ind_idx, c])), protocol) for c in chunks]
    mean = lambda key: float(np.mean([getattr(r, key) for r in reports]))
    return MetricsReport(
        auroc=mean("auroc"),
        aupr=mean("aupr"),
        fpr95=mean("fpr95"),
        closed_set_acc=reports[0].closed_set_acc,
        protocol=protocol,
        splits=k,
        per_split=[_split_row(i, r) for i, r in enumerate(reports)],
    )


def _split_row(i: int, rep: MetricsReport) -> dict:
    return {"split": i, "auroc": rep.auroc, "aupr": rep.aupr, "fpr95": rep.fpr95}
