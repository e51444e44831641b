"""Prototype losses (PL, PSL, PSL-CT) with analytic gradients.

All inputs are expected to be L2-normalised.  Every loss has the form

    L = -a + logsumexp(a, l_1, ..., l_m)

where ``a`` is the positive (prototype) logit and the ``l_j`` are the
competing logits, so the gradient of ``L`` with respect to a logit is its
softmax weight minus an indicator for the positive.  The chain rule back to
the vectors is then a matter of scaling each cosine-similarity derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

NORM_TOL = 1e-6


class Mode(str, Enum):
    PL = "PL"
    PSL = "PSL"
    PSL_CT = "PSL_CT"

    @classmethod
    def parse(cls, value: "Mode | str") -> "Mode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValidationError(
                f"mode: expected one of {[m.value for m in cls]}, got {value!r}"
            ) from None


@dataclass
class LossConfig:
    tau: float = 0.1
    s: float = 0.8
    s_shuf: Optional[float] = None  # None -> same as s

    def __post_init__(self):
        if self.s_shuf is None:
            self.s_shuf = self.s
        if not self.tau > 0:
            raise ValidationError(f"tau: must be > 0, got {self.tau}")
        if not 0 < self.s <= 1:
            raise ValidationError(f"s: must be in (0, 1], got {self.s}")
        if not 0 < self.s_shuf <= 1:
            raise ValidationError(f"s_shuf: must be in (0, 1], got {self.s_shuf}")


class PrototypeBank:
    """Unit-norm class prototypes, one row per class."""

    def __init__(self, prototypes, check: bool = True):
        k = np.array(prototypes, dtype=float)
        if k.ndim != 2:
            raise ValidationError("prototypes: expected an N x d matrix")
        if k.shape[0] < 2:
            raise ValidationError("prototypes: need at least 2 classes")
        if k.shape[1] < 2:
            raise ValidationError("prototypes: need dimension d >= 2")
        if check:
            _check_unit(k, "prototypes")
        self.prototypes = k

    @classmethod
    def random(cls, num_classes: int, dim: int, rng: np.random.Generator) -> "PrototypeBank":
        k = rng.standard_normal((num_classes, dim))
        return cls(k / np.linalg.norm(k, axis=1, keepdims=True))

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def renormalize(self) -> None:
        self.prototypes /= np.linalg.norm(self.prototypes, axis=1, keepdims=True)

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.prototypes.copy(), check=False)


@dataclass
class ContrastSets:
    negatives: Sequence[np.ndarray] = ()
    same_class: Sequence[np.ndarray] = ()
    shuffled: Optional[np.ndarray] = None

    def as_arrays(self, dim: int):
        neg = np.array(self.negatives, dtype=float).reshape(-1, dim)
        sc = np.array(self.same_class, dtype=float).reshape(-1, dim)
        shuf = None if self.shuffled is None else np.asarray(self.shuffled, dtype=float)
        return neg, sc, shuf


@dataclass
class LossOutput:
    value: float
    grad_anchor: np.ndarray
    grad_prototypes: np.ndarray
    grad_negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    grad_same_class: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    grad_shuffled: Optional[np.ndarray] = None


def _check_unit(x: np.ndarray, name: str) -> None:
    x = np.atleast_2d(x)
    if x.size == 0:
        return
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name}: non-finite entries")
    err = np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))
    if err > NORM_TOL:
        raise ValidationError(f"{name}: not unit-norm (max |norm - 1| = {err:.3g})")


def _softmax(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Return (logsumexp, softmax weights) with max shifting."""
    m = np.max(logits)
    e = np.exp(logits - m)
    tot = e.sum()
    return m + np.log(tot), e / tot


def _anchor_loss(z, label, bank, cfg, mode, neg, sc, shuf) -> LossOutput:
    z = np.asarray(z, dtype=float)
    k = bank.prototypes
    n_cls, d = k.shape
    if z.shape != (d,):
        raise ValidationError(f"z: expected shape ({d},), got {z.shape}")
    _check_unit(z, "z")
    if not (0 <= int(label) < n_cls) or int(label) != label:
        raise ValidationError(f"label: expected integer in [0, {n_cls}), got {label}")
    label = int(label)
    for arr, name in ((neg, "negatives"), (sc, "same_class")):
        if arr.shape[1] != d:
            raise ValidationError(f"{name}: expected dimension {d}")
        _check_unit(arr, name)
    if shuf is not None:
        if shuf.shape != (d,):
            raise ValidationError(f"shuffled: expected shape ({d},)")
        _check_unit(shuf, "shuffled")

    tau = cfg.tau
    sim_k = k @ z
    # logits layout: [prototypes (N) | negatives | same-class | shuffled]
    logit_k = sim_k / tau
    if mode is Mode.PL:
        sgn_pos = -1.0  # d(logit)/d(sim) = +1/tau, stored as -sgn below
    else:
        dev = sim_k[label] - cfg.s
        logit_k[label] = (1.0 - abs(dev)) / tau
        sgn_pos = np.sign(dev)

    sim_n = neg @ z
    dev_sc = sc @ z - cfg.s
    parts = [logit_k, sim_n / tau, np.abs(dev_sc) / tau]
    if shuf is not None:
        dev_sh = float(shuf @ z) - cfg.s_shuf
        parts.append(np.array([abs(dev_sh) / tau]))
    logits = np.concatenate(parts)

    lse, w = _softmax(logits)
    value = lse - logits[label]
    g = w.copy()
    g[label] -= 1.0  # dL/dlogit

    # dL/dsim for every similarity
    gk = g[:n_cls] / tau
    gk[label] = -sgn_pos * g[label] / tau
    off = n_cls
    gn = g[off:off + len(neg)] / tau
    off += len(neg)
    gsc = g[off:off + len(sc)] * np.sign(dev_sc) / tau
    off += len(sc)

    grad_z = gk @ k + gn @ neg + gsc @ sc
    grad_k = np.outer(gk, z)
    out = LossOutput(
        value=float(value),
        grad_anchor=grad_z,
        grad_prototypes=grad_k,
        grad_negatives=np.outer(gn, z),
        grad_same_class=np.outer(gsc, z),
    )
    if shuf is not None:
        gsh = g[off] * np.sign(dev_sh) / tau
        out.grad_anchor = grad_z + gsh * shuf
        out.grad_shuffled = gsh * z
    return out


def pl_loss(z, label: int, bank: PrototypeBank, cfg: LossConfig) -> LossOutput:
    """Prototypical learning loss: cross-entropy over cosine logits ``z.k / tau``."""
    d = bank.dim
    empty = np.zeros((0, d))
    return _anchor_loss(z, label, bank, cfg, Mode.PL, empty, empty, None)


def psl_loss(z, label: int, bank: PrototypeBank, cfg: LossConfig) -> LossOutput:
    """PL with the positive logit replaced by ``(1 - |z.k_i - s|) / tau``.

    The subgradient of ``|x|`` at 0 is taken as 0.
    """
    d = bank.dim
    empty = np.zeros((0, d))
    return _anchor_loss(z, label, bank, cfg, Mode.PSL, empty, empty, None)


def psl_ct_loss(z, label: int, bank: PrototypeBank, contrasts: ContrastSets,
                cfg: LossConfig) -> LossOutput:
    """PSL with in-batch contrastive terms.

    Negatives enter the denominator as ``exp(z.n / tau)``; soft positives
    (same-class samples and the optional shuffled copy) as
    ``exp(|z.p - s_p| / tau)`` with ``s_p = cfg.s`` or ``cfg.s_shuf``.
    """
    neg, sc, shuf = contrasts.as_arrays(bank.dim)
    return _anchor_loss(z, label, bank, cfg, Mode.PSL_CT, neg, sc, shuf)


@dataclass
class BatchLossOutput:
    value: float
    grad_features: np.ndarray
    grad_prototypes: np.ndarray
    grad_shuffled: Optional[np.ndarray]
    per_anchor: np.ndarray


def batch_loss(features, labels, shuffled_features, bank: PrototypeBank, cfg: LossConfig,
               mode: "Mode | str" = Mode.PSL_CT) -> BatchLossOutput:
    """Mean per-anchor loss over a mini-batch, vectorised.

    In PSL_CT mode each anchor contrasts against in-batch samples of other
    classes (negatives), in-batch samples of its own class excluding itself
    (soft positives) and, if given, its own shuffled copy (soft positive with
    target ``s_shuf``).  Shuffled rows never act as anchors or as contrasts
    for other anchors.  Gradients accumulate over every role a row plays.
    """
    mode = Mode.parse(mode)
    z = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    k = bank.prototypes
    n_cls, d = k.shape
    if z.ndim != 2 or z.shape[1] != d:
        raise ValidationError(f"features: expected B x {d} matrix, got shape {z.shape}")
    b = z.shape[0]
    if y.shape != (b,):
        raise ValidationError(f"labels: expected length {b}, got shape {y.shape}")
    if b == 0:
        raise ValidationError("features: empty batch")
    if np.any(y < 0) or np.any(y >= n_cls):
        raise ValidationError(f"labels: values must lie in [0, {n_cls})")
    y = y.astype(int)
    _check_unit(z, "features")
    zs = None
    if shuffled_features is not None and mode is Mode.PSL_CT:
        zs = np.asarray(shuffled_features, dtype=float)
        if zs.shape != z.shape:
            raise ValidationError(
                f"shuffled_features: expected shape {z.shape}, got {zs.shape}")
        _check_unit(zs, "shuffled_features")

    tau = cfg.tau
    rows = np.arange(b)
    sim_k = z @ k.T
    logit_k = sim_k / tau
    if mode is Mode.PL:
        sgn_pos = -np.ones(b)
    else:
        dev = sim_k[rows, y] - cfg.s
        logit_k[rows, y] = (1.0 - np.abs(dev)) / tau
        sgn_pos = np.sign(dev)

    blocks = [logit_k]
    if mode is Mode.PSL_CT:
        sim_zz = z @ z.T
        same = y[:, None] == y[None, :]
        neg_mask = ~same
        sc_mask = same.copy()
        sc_mask[rows, rows] = False
        dev_zz = sim_zz - cfg.s
        logit_zz = np.where(neg_mask, sim_zz / tau, np.abs(dev_zz) / tau)
        logit_zz = np.where(neg_mask | sc_mask, logit_zz, -np.inf)
        blocks.append(logit_zz)
        if zs is not None:
            dev_sh = np.einsum("ij,ij->i", z, zs) - cfg.s_shuf
            blocks.append((np.abs(dev_sh) / tau)[:, None])
    logits = np.concatenate(blocks, axis=1)

    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    tot = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(tot[:, 0])
    per_anchor = lse - logits[rows, y]
    g = e / tot
    g[rows, y] -= 1.0
    g /= b  # mean over anchors

    gk = g[:, :n_cls] / tau
    gk[rows, y] = -sgn_pos * g[rows, y] / tau
    grad_z = gk @ k
    grad_k = gk.T @ z
    grad_zs = None
    if mode is Mode.PSL_CT:
        gzz = g[:, n_cls:n_cls + b]
        gzz = np.where(neg_mask, gzz, gzz * np.sign(dev_zz)) / tau
        gzz = np.where(neg_mask | sc_mask, gzz, 0.0)
        grad_z = grad_z + gzz @ z + gzz.T @ z
        if zs is not None:
            gsh = g[:, -1] * np.sign(dev_sh) / tau
            grad_z = grad_z + gsh[:, None] * zs
            grad_zs = gsh[:, None] * z
    return BatchLossOutput(
        value=float(per_anchor.mean()),
        grad_features=grad_z,
        grad_prototypes=grad_k,
        grad_shuffled=grad_zs,
        per_anchor=per_anchor,
    )
