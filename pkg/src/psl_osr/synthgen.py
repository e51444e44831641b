"""Synthetic sequence dataset with appearance twins.

Every class ``c`` owns an appearance vector ``a_c`` and a zero-mean temporal
pattern ``p_c(t) = m_c * sin(2 pi f_c t / T + phi_c)``.  A frame is
``a_c + p_c(t) + noise``.  A fraction of the OoD classes reuse the appearance
vector of an InD class and differ only through their temporal pattern, so the
per-sequence frame mean cannot tell them apart.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError


@dataclass
class GeneratorConfig:
    num_ind_classes: int = 8
    num_ood_classes: int = 4
    frames_per_seq: int = 8
    frame_dim: int = 16
    noise_sigma: float = 0.1
    appearance_twin_fraction: float = 0.5
    seed: int = 0
    appearance_scale: float = 1.0
    pattern_scale: float = 1.0
    instance_sigma: float = 0.0

    def validate(self) -> "GeneratorConfig":
        if int(self.num_ind_classes) < 2:
            raise ValidationError("num_ind_classes: must be >= 2")
        if int(self.num_ood_classes) < 0:
            raise ValidationError("num_ood_classes: must be >= 0")
        if int(self.frames_per_seq) < 2:
            raise ValidationError("frames_per_seq: must be >= 2")
        if int(self.frame_dim) < 1:
            raise ValidationError("frame_dim: must be >= 1")
        if not self.noise_sigma >= 0:
            raise ValidationError("noise_sigma: must be >= 0")
        if not 0 <= self.appearance_twin_fraction <= 1:
            raise ValidationError("appearance_twin_fraction: must lie in [0, 1]")
        if not self.instance_sigma >= 0:
            raise ValidationError("instance_sigma: must be >= 0")
        if self.appearance_scale < 0 or self.pattern_scale < 0:
            raise ValidationError("appearance_scale/pattern_scale: must be >= 0")
        return self

    @property
    def num_classes(self) -> int:
        return self.num_ind_classes + self.num_ood_classes

    @property
    def num_twins(self) -> int:
        return int(round(self.appearance_twin_fraction * self.num_ood_classes))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValidationError(f"generator: unknown field(s) {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            default = known[name].default
            try:
                kwargs[name] = type(default)(value)
            except (TypeError, ValueError):
                raise ValidationError(f"generator.{name}: cannot parse {value!r}") from None
        return cls(**kwargs).validate()


@dataclass
class SequenceSample:
    frames: np.ndarray
    label: int
    is_ood: bool
    sample_id: int = -1
    shuffled_from: Optional[int] = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class ClassSpec:
    label: int
    is_ood: bool
    appearance: np.ndarray
    amplitude: np.ndarray
    frequency: int
    phase: float
    twin_of: Optional[int] = None

    def pattern(self, num_frames: int) -> np.ndarray:
        t = np.arange(num_frames)
        wave = np.sin(2 * np.pi * self.frequency * t / num_frames + self.phase)
        pat = wave[:, None] * self.amplitude[None, :]
        # exact zero temporal mean (sin sums cancel only up to rounding)
        return pat - pat.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "is_ood": self.is_ood,
            "twin_of": self.twin_of,
            "frequency": self.frequency,
            "phase": self.phase,
        }


def class_specs(cfg: GeneratorConfig) -> list[ClassSpec]:
    """Draw the per-class appearance and temporal pattern parameters.

    InD classes get labels ``0..N_ind-1``; OoD classes follow.  The first
    ``num_twins`` OoD classes copy the appearance of InD classes
    ``0, 1, ...`` (cycling) but draw a fresh temporal pattern.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 0])
    d, t_len = cfg.frame_dim, cfg.frames_per_seq
    max_freq = max(1, (t_len - 1) // 2)
    specs = []
    for c in range(cfg.num_classes):
        is_ood = c >= cfg.num_ind_classes
        appearance = rng.standard_normal(d) * cfg.appearance_scale / np.sqrt(d)
        amplitude = rng.standard_normal(d) * cfg.pattern_scale / np.sqrt(d)
        freq = int(rng.integers(1, max_freq + 1))
        phase = float(rng.uniform(0, 2 * np.pi))
        twin_of = None
        n_ind = cfg.num_ind_classes
        if is_ood and (c - n_ind) < cfg.num_twins:
            twin_of = (c - n_ind) % n_ind
        if twin_of is not None:
            src = specs[twin_of]
            appearance = src.appearance.copy()
            # same frame content, different order: only frequency/phase change
            amplitude = src.amplitude.copy()
            phase = float(src.phase + rng.uniform(np.pi / 2, 3 * np.pi / 2))
        specs.append(ClassSpec(c, is_ood, appearance, amplitude, freq, phase, twin_of))
    return specs


def generate(cfg: GeneratorConfig, count_per_class: int, stream: int = 0,
             id_offset: int = 0) -> list[SequenceSample]:
    """Generate ``count_per_class`` samples for every InD and OoD class.

    ``stream`` selects an independent noise stream (used to draw train and
    test sets from the same classes); sample ids start at ``id_offset``.
    """
    cfg.validate()
    if count_per_class < 0:
        raise ValidationError("count_per_class: must be >= 0")
    specs = class_specs(cfg)
    rng = np.random.default_rng([cfg.seed, 1, stream])
    samples = []
    sid = id_offset
    for spec in specs:
        base = spec.appearance[None, :] + spec.pattern(cfg.frames_per_seq)
        for _ in range(count_per_class):
            noise = rng.standard_normal(base.shape) * cfg.noise_sigma
            if cfg.instance_sigma > 0:
                noise += rng.standard_normal(base.shape[1]) * cfg.instance_sigma
            samples.append(SequenceSample(base + noise, spec.label, spec.is_ood, sid))
            sid += 1
    return samples


@dataclass
class DatasetSplits:
    train: list[SequenceSample]
    test_ind: list[SequenceSample]
    ood: list[SequenceSample]
    specs: list[ClassSpec] = field(default_factory=list)


def make_splits(cfg: GeneratorConfig, train_per_class: int = 250,
                test_per_class: int = 100) -> DatasetSplits:
    """Train (InD only), test InD and OoD sets with disjoint sample ids."""
    train = [s for s in generate(cfg, train_per_class, stream=0) if not s.is_ood]
    test = generate(cfg, test_per_class, stream=1, id_offset=cfg.num_classes * train_per_class)
    return DatasetSplits(
        train=train,
        test_ind=[s for s in test if not s.is_ood],
        ood=[s for s in test if s.is_ood],
        specs=class_specs(cfg),
    )


def non_identity_permutation(num_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of ``range(num_frames)`` excluding the identity."""
    if num_frames < 2:
        raise ValidationError("frames: need T >= 2 to shuffle")
    ident = np.arange(num_frames)
    while True:
        perm = rng.permutation(num_frames)
        if not np.array_equal(perm, ident):
            return perm


def shuffle_frames(sample: SequenceSample, seed) -> SequenceSample:
    """Return a copy with frames in a random non-identity order."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = non_identity_permutation(sample.num_frames, rng)
    return SequenceSample(
        frames=sample.frames[perm].copy(),
        label=sample.label,
        is_ood=sample.is_ood,
        sample_id=sample.sample_id,
        shuffled_from=sample.sample_id,
    )


def stack_frames(samples: list[SequenceSample]) -> np.ndarray:
    return np.stack([s.frames for s in samples]) if samples else np.zeros((0, 0, 0))
