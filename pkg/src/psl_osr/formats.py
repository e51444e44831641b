"""On-disk formats: dataset/embedding/score CSVs, checkpoint and report JSON.

Floats are written with ``repr`` so files round-trip exactly and repeated
runs are byte-identical.
"""
from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .losses import PrototypeBank
from .metrics import MetricsReport, ScoreSet
from .synthgen import SequenceSample
from .trainer import EncoderParams, PARAM_NAMES, TrainConfig

CHECKPOINT_FORMAT = "psl_osr.checkpoint/1"
DATASET_FILES = {"train": "train.csv", "test_ind": "test_ind.csv", "ood": "ood.csv"}


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_json(path, obj) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None


# -- sequences ---------------------------------------------------------------

def write_samples(path, samples: list[SequenceSample]) -> None:
    width = samples[0].frames.size if samples else 0
    header = ["sample_id", "label", "is_ood"] + [f"f_{i}" for i in range(width)]
    write_csv(path, header, (
        [s.sample_id, s.label, s.is_ood, *s.frames.ravel()] for s in samples))


def read_samples(path, frames_per_seq: int, frame_dim: int) -> list[SequenceSample]:
    header, rows = read_csv(path)
    width = frames_per_seq * frame_dim
    if header[:3] != ["sample_id", "label", "is_ood"] or len(header) != 3 + width:
        raise ValidationError(
            f"{path}: expected header sample_id,label,is_ood,f_0..f_{width - 1}")
    out = []
    for row in rows:
        frames = np.array([float(v) for v in row[3:]]).reshape(frames_per_seq, frame_dim)
        out.append(SequenceSample(frames, int(row[1]), bool(int(row[2])), int(row[0])))
    return out


def write_embeddings(path, ids, labels, is_ood, z) -> None:
    header = ["sample_id", "label", "is_ood"] + [f"z_{i}" for i in range(z.shape[1])]
    write_csv(path, header, ([i, l, o, *row] for i, l, o, row in zip(ids, labels, is_ood, z)))


# -- checkpoints -------------------------------------------------------------

def checkpoint_dict(params: EncoderParams, bank: PrototypeBank, cfg: TrainConfig,
                    log: list[dict], extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "encoder": {n: a.tolist() for n, a in params.arrays().items()},
        "prototypes": bank.prototypes.tolist(),
        "log": log,
    }
    if extra:
        doc.update(extra)
    return doc


def load_checkpoint(path):
    doc = read_json(path)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    enc = doc["encoder"]
    params = EncoderParams(**{n: np.array(enc[n], dtype=float) for n in PARAM_NAMES})
    bank = PrototypeBank(np.array(doc["prototypes"], dtype=float))
    cfg = TrainConfig.from_dict(doc["config"])
    return params, bank, cfg, doc


# -- scores and reports ------------------------------------------------------

SCORE_HEADER = ["sample_id", "label", "is_ood", "predicted_label", "uncertainty"]


def write_scores(path, scores: ScoreSet) -> None:
    n = len(scores)
    ids = scores.sample_id if scores.sample_id is not None else range(n)
    write_csv(path, SCORE_HEADER, zip(ids, scores.true_label, scores.is_ood,
                                      scores.predicted_label, scores.uncertainty))


def read_scores(path) -> ScoreSet:
    header, rows = read_csv(path)
    if header != SCORE_HEADER:
        raise ValidationError(f"{path}: expected header {','.join(SCORE_HEADER)}")
    cols = list(zip(*rows)) if rows else [()] * 5
    return ScoreSet(
        uncertainty=[float(v) for v in cols[4]],
        is_ood=[bool(int(v)) for v in cols[2]],
        true_label=np.array([int(v) for v in cols[1]]),
        predicted_label=np.array([int(v) for v in cols[3]]),
        sample_id=np.array([int(v) for v in cols[0]]),
    )


def write_report(path, report: MetricsReport) -> None:
    write_json(path, report.to_dict())


def read_report(path) -> MetricsReport:
    return MetricsReport.from_dict(read_json(path))


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror or exc}") from exc
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory is not writable: {path}")
    return path
