"""Order-sensitive MLP encoder with manual backprop and SGD training."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ValidationError
from .losses import LossConfig, Mode, PrototypeBank, batch_loss
from .synthgen import SequenceSample

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass
class EncoderParams:
    W1: np.ndarray  # h x (T*d_f)
    b1: np.ndarray
    W2: np.ndarray  # d x h
    b2: np.ndarray

    @classmethod
    def init(cls, input_dim: int, hidden: int, dim: int, rng: np.random.Generator) -> "EncoderParams":
        if hidden < dim:
            raise ValidationError(f"hidden: must be >= dim ({dim}), got {hidden}")
        return cls(
            W1=rng.standard_normal((hidden, input_dim)) * np.sqrt(2.0 / input_dim),
            b1=np.zeros(hidden),
            W2=rng.standard_normal((dim, hidden)) * np.sqrt(1.0 / hidden),
            b2=np.zeros(dim),
        )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{n: a.copy() for n, a in self.arrays().items()})


@dataclass
class TrainConfig:
    mode: Mode = Mode.PSL_CT
    use_shuffled: bool = True
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    hidden: int = 64
    dim: int = 16

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)

    def validate(self) -> "TrainConfig":
        if int(self.batch_size) < 1:
            raise ValidationError("batch_size: must be >= 1")
        if int(self.epochs) < 0:
            raise ValidationError("epochs: must be >= 0")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate: must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValidationError("momentum: must lie in [0, 1)")
        if int(self.dim) < 2:
            raise ValidationError("dim: must be >= 2")
        if int(self.hidden) < int(self.dim):
            raise ValidationError("hidden: must be >= dim")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = cls.__dataclass_fields__
        unknown = set(data) - set(known)
        if unknown:
            raise ValidationError(f"train: unknown field(s) {sorted(unknown)}")
        loss = data.pop("loss", {}) or {}
        unknown = set(loss) - set(LossConfig.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"train.loss: unknown field(s) {sorted(unknown)}")
        casts = {"use_shuffled": bool, "epochs": int, "batch_size": int, "learning_rate": float,
                 "momentum": float, "seed": int, "hidden": int, "dim": int}
        kwargs = {}
        for name, value in data.items():
            if name == "mode":
                kwargs[name] = Mode.parse(value)
                continue
            try:
                kwargs[name] = casts[name](value)
            except (TypeError, ValueError):
                raise ValidationError(f"train.{name}: cannot parse {value!r}") from None
        return cls(loss=LossConfig(**loss), **kwargs).validate()


def flatten(samples) -> np.ndarray:
    """Stack samples into a B x (T*d_f) matrix, frames in row-major order."""
    if isinstance(samples, SequenceSample):
        samples = [samples]
    if isinstance(samples, np.ndarray):
        x = samples
    else:
        x = np.stack([s.frames for s in samples])
    return x.reshape(x.shape[0], -1)


def _forward(params: EncoderParams, x: np.ndarray):
    if x.shape[1] != params.input_dim:
        raise ValidationError(
            f"input: expected {params.input_dim} features per sample, got {x.shape[1]}")
    a = x @ params.W1.T + params.b1
    h = np.maximum(a, 0.0)
    y = h @ params.W2.T + params.b2
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(norm == 0):
        raise ValidationError("encoder output has zero norm; cannot normalise")
    return y / norm, (x, a, h, norm)


def _backward(params: EncoderParams, cache, z: np.ndarray, grad_z: np.ndarray) -> dict:
    x, a, h, norm = cache
    # exact Jacobian of y -> y/|y|: (I - z z^T) / |y|
    gy = (grad_z - np.sum(grad_z * z, axis=1, keepdims=True) * z) / norm
    gh = gy @ params.W2
    ga = gh * (a > 0)
    return {"W1": ga.T @ x, "b1": ga.sum(axis=0), "W2": gy.T @ h, "b2": gy.sum(axis=0)}


def encode_batch(params: EncoderParams, samples) -> np.ndarray:
    return _forward(params, flatten(samples))[0]


def encode(params: EncoderParams, sample: SequenceSample) -> np.ndarray:
    """Unit-norm embedding ``normalize(W2 relu(W1 x + b1) + b2)``."""
    return encode_batch(params, [sample])[0]


def predict_class(z, bank: PrototypeBank):
    """Nearest prototype by cosine similarity; ties go to the lowest index.

    Accepts a single vector or a matrix of row vectors.
    """
    sims = np.asarray(z) @ bank.prototypes.T
    return np.argmax(sims, axis=-1)  # argmax returns the first maximum


def batch_objective(params: EncoderParams, bank: PrototypeBank, x, labels, x_shuf,
                    cfg: TrainConfig):
    """Loss and gradients of the full encoder + loss composition for one batch."""
    if x_shuf is not None:
        z_all, cache = _forward(params, np.concatenate([x, x_shuf]))
        b = x.shape[0]
        z, zs = z_all[:b], z_all[b:]
    else:
        z_all, cache = _forward(params, x)
        z, zs = z_all, None
    out = batch_loss(z, labels, zs, bank, cfg.loss, cfg.mode)
    gz = out.grad_features if zs is None else np.concatenate([out.grad_features, out.grad_shuffled])
    grads = _backward(params, cache, z_all, gz)
    grads["K"] = out.grad_prototypes
    return out.value, grads


def shuffle_batch(x3: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independently permute the frames of each sequence (never the identity)."""
    b, t_len = x3.shape[:2]
    if t_len < 2:
        raise ValidationError("frames: need T >= 2 to shuffle")
    perms = np.argsort(rng.random((b, t_len)), axis=1)
    ident = np.arange(t_len)
    bad = np.all(perms == ident, axis=1)
    while np.any(bad):
        perms[bad] = np.argsort(rng.random((bad.sum(), t_len)), axis=1)
        bad = np.all(perms == ident, axis=1)
    return np.take_along_axis(x3, perms[:, :, None], axis=1)


def representation_stats(z: np.ndarray, labels: np.ndarray, bank: PrototypeBank) -> dict:
    """Mean sim(z, k_i), mean sim(z, zbar_i) and mean per-dimension variance."""
    sim_k, sim_m, var = [], [], []
    for c in np.unique(labels):
        zc = z[labels == c]
        mean = zc.mean(axis=0)
        sim_k.append(zc @ bank.prototypes[c])
        sim_m.append(zc @ mean / np.linalg.norm(mean))
        if len(zc) > 1:
            var.append(zc.var(axis=0).mean())
    return {
        "sim_proto": float(np.concatenate(sim_k).mean()),
        "sim_mean": float(np.concatenate(sim_m).mean()),
        "variance": float(np.mean(var)) if var else 0.0,
    }


@dataclass
class TrainResult:
    params: EncoderParams
    bank: PrototypeBank
    log: list[dict]
    init_params: EncoderParams
    init_bank: PrototypeBank


def initialize(input_dim: int, num_classes: int, cfg: TrainConfig):
    rng = np.random.default_rng([cfg.seed, 0])
    params = EncoderParams.init(input_dim, cfg.hidden, cfg.dim, rng)
    bank = PrototypeBank.random(num_classes, cfg.dim, rng)
    return params, bank


def train(dataset, cfg: TrainConfig, num_classes: int | None = None) -> TrainResult:
    """Mini-batch SGD with momentum on the chosen loss.

    Prototypes share the optimiser state with the encoder weights and are
    projected back onto the unit sphere after every step.  When
    ``cfg.use_shuffled`` (PSL_CT only) every batch element is paired with a
    freshly shuffled copy of itself.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise ValidationError("dataset: empty")
    if any(s.is_ood for s in dataset):
        raise ValidationError("dataset: training data must contain only InD samples")
    x3 = np.stack([s.frames for s in dataset])
    labels = np.array([s.label for s in dataset])
    n_cls = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_cls:
        raise ValidationError(f"labels: must lie in [0, {n_cls})")
    x = x3.reshape(len(dataset), -1)

    params, bank = initialize(x.shape[1], n_cls, cfg)
    init_params, init_bank = params.copy(), bank.copy()
    rng = np.random.default_rng([cfg.seed, 1])
    use_shuf = cfg.use_shuffled and cfg.mode is Mode.PSL_CT
    velocity = {n: np.zeros_like(a) for n, a in params.arrays().items()}
    velocity["K"] = np.zeros_like(bank.prototypes)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xs = shuffle_batch(x3[idx], rng).reshape(len(idx), -1) if use_shuf else None
            value, grads = batch_objective(params, bank, x[idx], labels[idx], xs, cfg)
            if not np.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            losses.append(value * len(idx))
            for name, g in grads.items():
                v = velocity[name]
                v *= cfg.momentum
                v += g
                target = bank.prototypes if name == "K" else getattr(params, name)
                target -= cfg.learning_rate * v
            bank.renormalize()
        z = _forward(params, x)[0]
        pred = predict_class(z, bank)
        entry = {"epoch": epoch + 1, "loss": float(np.sum(losses) / n),
                 "acc": float(np.mean(pred == labels))}
        entry.update(representation_stats(z, labels, bank))
        history.append(entry)
        log.debug("epoch %d: %s", epoch + 1, entry)
    return TrainResult(params, bank, history, init_params, init_bank)
