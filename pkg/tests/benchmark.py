"""Cached desk-scale training runs shared by the acceptance and directional tests."""
from functools import lru_cache

import numpy as np

from psl_osr.pipeline import RunConfig, benchmark_config, make_data, run, with_overrides

SEEDS = (0, 1, 2, 3, 4)

RESULTS = []  # (criterion, title, passed, detail), printed at the end of the session


def record(criterion, title, passed, detail=""):
    RESULTS.append((criterion, title, bool(passed), detail))
    line = f"[{'PASS' if passed else 'FAIL'}] C{criterion} {title}"
    return line + (f": {detail}" if detail else "")


def base_config(world: str) -> RunConfig:
    """``default``: the default generator and trainer; ``bench``/``twins``: the benchmark."""
    if world == "default":
        return RunConfig()
    if world == "bench":
        return benchmark_config(0.5)
    if world == "twins":
        return benchmark_config(1.0)
    raise KeyError(world)


@lru_cache(maxsize=None)
def dataset(world: str, seed: int):
    return make_data(with_overrides(base_config(world), data_seed=seed))


@lru_cache(maxsize=None)
def trained(world: str, mode: str, shuffled: bool, s: float, seed: int, dim: int = 16):
    cfg = with_overrides(base_config(world), mode=mode, use_shuffled=shuffled, s=s, dim=dim,
                         train_seed=seed, data_seed=seed)
    return run(cfg, dataset(world, seed))


def seed_mean(fn, world, mode, shuffled, s, dim=16):
    return float(np.mean([fn(trained(world, mode, shuffled, s, seed, dim)) for seed in SEEDS]))


def auroc_of(r):
    return r.report.auroc


def acc_of(r):
    return r.report.closed_set_acc
