"""End-to-end helpers shared by the CLI, sweeps and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ValidationError
from .losses import LossConfig, PrototypeBank
from .metrics import MetricsReport, ScoreSet, split_evaluate
from .synthgen import DatasetSplits, GeneratorConfig, make_splits
from .trainer import EncoderParams, TrainConfig, TrainResult, encode_batch, predict_class, train
from .uncertainty import (fit_gaussian, mahalanobis_score, one_threshold_binarize,
                          percentile_threshold, softmax_uncertainty)

METHODS = ("mahalanobis", "softmax")
PROTOCOLS = ("all_thresholds", "one_threshold")


@dataclass
class EvalConfig:
    method: str = "mahalanobis"
    protocol: str = "all_thresholds"
    splits: int = 1
    split_seed: int = 0
    ridge: Optional[float] = None

    def validate(self) -> "EvalConfig":
        if self.method not in METHODS:
            raise ValidationError(f"method: expected one of {METHODS}, got {self.method!r}")
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol: expected one of {PROTOCOLS}, got {self.protocol!r}")
        if int(self.splits) < 1:
            raise ValidationError("splits: must be >= 1")
        return self


@dataclass
class DataConfig:
    train_per_class: int = 250
    test_per_class: int = 100


@dataclass
class RunConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - {"generator", "train", "data", "eval"}
        if unknown:
            raise ValidationError(f"config: unknown section(s) {sorted(unknown)}")
        data = doc.get("data", {}) or {}
        ev = doc.get("eval", {}) or {}
        for section, body, kind in (("data", data, DataConfig), ("eval", ev, EvalConfig)):
            extra = set(body) - set(kind.__dataclass_fields__)
            if extra:
                raise ValidationError(f"{section}: unknown field(s) {sorted(extra)}")
        try:
            data_cfg = DataConfig(**{k: int(v) for k, v in data.items()})
        except (TypeError, ValueError):
            raise ValidationError("data: counts must be integers") from None
        if data_cfg.train_per_class < 1 or data_cfg.test_per_class < 1:
            raise ValidationError("data: counts must be >= 1")
        return cls(
            generator=GeneratorConfig.from_dict(doc.get("generator", {}) or {}),
            train=TrainConfig.from_dict(doc.get("train", {}) or {}),
            data=data_cfg,
            eval=EvalConfig(**ev).validate(),
        )

    def to_dict(self) -> dict:
        return {
            "generator": self.generator.to_dict(),
            "train": self.train.to_dict(),
            "data": vars(self.data).copy(),
            "eval": vars(self.eval).copy(),
        }


def benchmark_config(twin_fraction: float = 0.5, seed: int = 0) -> RunConfig:
    """Desk-scale open-set benchmark.

    Appearance dominates the frames (temporal patterns at half scale, noise
    0.2), so an encoder can lean on appearance alone and appearance twins are
    hard to reject.  A softer temperature (0.3) keeps the soft-positive terms
    from saturating; 60 epochs at lr 0.02 converge.
    """
    gen = GeneratorConfig(pattern_scale=0.5, noise_sigma=0.2,
                          appearance_twin_fraction=twin_fraction, seed=seed)
    tr = TrainConfig(epochs=60, learning_rate=0.02, loss=LossConfig(tau=0.3, s=0.8), seed=seed)
    return RunConfig(gen.validate(), tr.validate())


def make_data(cfg: RunConfig) -> DatasetSplits:
    return make_splits(cfg.generator, cfg.data.train_per_class, cfg.data.test_per_class)


def _labels(samples):
    return np.array([s.label for s in samples], dtype=int)


@dataclass
class Scored:
    scores: ScoreSet
    train_scores: np.ndarray
    train_features: np.ndarray
    test_features: np.ndarray


def score(params: EncoderParams, bank: PrototypeBank, data: DatasetSplits,
          method: str = "mahalanobis", tau: float = 0.1,
          ridge: Optional[float] = None) -> Scored:
    """Encode all splits and attach an uncertainty to every test record."""
    if data.train and data.train[0].frames.size != params.input_dim:
        raise ValidationError(
            f"dataset/checkpoint mismatch: samples have {data.train[0].frames.size} "
            f"values, encoder expects {params.input_dim}")
    test = data.test_ind + data.ood
    z_train = encode_batch(params, data.train)
    z_test = encode_batch(params, test)
    if method == "mahalanobis":
        head = fit_gaussian(z_train, ridge)
        u_train = mahalanobis_score(head, z_train)
        u_test = mahalanobis_score(head, z_test)
    elif method == "softmax":
        u_train = softmax_uncertainty(z_train, bank, tau)
        u_test = softmax_uncertainty(z_test, bank, tau)
    else:
        raise ValidationError(f"method: expected one of {METHODS}, got {method!r}")
    scores = ScoreSet(
        uncertainty=u_test,
        is_ood=[s.is_ood for s in test],
        true_label=_labels(test),
        predicted_label=predict_class(z_test, bank),
        sample_id=np.array([s.sample_id for s in test]),
    )
    return Scored(scores, np.atleast_1d(u_train), z_train, z_test)


def evaluate_scored(scored: Scored, ev: EvalConfig) -> MetricsReport:
    scores = scored.scores
    threshold = None
    if ev.protocol == "one_threshold":
        threshold = percentile_threshold(scored.train_scores, 95.0)
        scores = scores.with_scores(one_threshold_binarize(scores.uncertainty, threshold))
    report = split_evaluate(scores, int(ev.splits), ev.split_seed, ev.protocol)
    report.threshold = threshold
    return report


@dataclass
class RunResult:
    train: TrainResult
    scored: Scored
    report: MetricsReport
    data: DatasetSplits


def run(cfg: RunConfig, data: Optional[DatasetSplits] = None) -> RunResult:
    """Generate (unless given), train, score and evaluate one configuration."""
    data = data if data is not None else make_data(cfg)
    result = train(data.train, cfg.train, cfg.generator.num_ind_classes)
    scored = score(result.params, result.bank, data, cfg.eval.method,
                   cfg.train.loss.tau, cfg.eval.ridge)
    return RunResult(result, scored, evaluate_scored(scored, cfg.eval), data)


def with_overrides(cfg: RunConfig, *, s=None, s_shuf=None, dim=None, mode=None,
                   use_shuffled=None, train_seed=None, data_seed=None, epochs=None) -> RunConfig:
    """Copy of ``cfg`` with selected training/data knobs replaced."""
    loss = cfg.train.loss
    if s is not None or s_shuf is not None:
        new_s = loss.s if s is None else s
        # s_shuf follows s unless set explicitly
        new_shuf = s_shuf if s_shuf is not None else (new_s if s is not None else loss.s_shuf)
        loss = LossConfig(loss.tau, new_s, new_shuf)
    tr = replace(cfg.train, loss=loss)
    if dim is not None:
        tr = replace(tr, dim=int(dim), hidden=max(tr.hidden, int(dim)))
    if mode is not None:
        tr = replace(tr, mode=mode)
    if use_shuffled is not None:
        tr = replace(tr, use_shuffled=use_shuffled)
    if train_seed is not None:
        tr = replace(tr, seed=int(train_seed))
    if epochs is not None:
        tr = replace(tr, epochs=int(epochs))
    gen = cfg.generator if data_seed is None else replace(cfg.generator, seed=int(data_seed))
    return RunConfig(gen, tr.validate(), cfg.data, cfg.eval)
