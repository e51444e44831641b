"""Independent reference implementations used only by the tests.

These are deliberately naive (plain loops, no log-sum-exp shifting, no
vectorisation) so they share no code path with the package.
"""
import math

import numpy as np


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def rand_unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def dot(a, b):
    return sum(float(x) * float(y) for x, y in zip(a, b))


def direct_loss(z, label, protos, tau, mode="PL", s=1.0, negatives=(), same_class=(),
                shuffled=None, s_shuf=None):
    """Direct evaluation of the PL / PSL / PSL-CT formulas."""
    s_shuf = s if s_shuf is None else s_shuf
    sim = dot(z, protos[label])
    if mode == "PL":
        num = math.exp(sim / tau)
    else:
        num = math.exp((1 - abs(sim - s)) / tau)
    den = num
    for j, k in enumerate(protos):
        if j != label:
            den += math.exp(dot(z, k) / tau)
    if mode == "PSL_CT":
        for n in negatives:
            den += math.exp(dot(z, n) / tau)
        for p in same_class:
            den += math.exp(abs(dot(z, p) - s) / tau)
        if shuffled is not None:
            den += math.exp(abs(dot(z, shuffled) - s_shuf) / tau)
    return -math.log(num / den)


def direct_batch_loss(z, labels, zs, protos, tau, mode, s, s_shuf=None):
    total = 0.0
    b = len(z)
    for a in range(b):
        neg = [z[j] for j in range(b) if labels[j] != labels[a]]
        sc = [z[j] for j in range(b) if labels[j] == labels[a] and j != a]
        sh = None if zs is None else zs[a]
        total += direct_loss(z[a], labels[a], protos, tau, mode, s, neg, sc, sh, s_shuf)
    return total / b


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f()
        x[i] = orig - h
        fm = f()
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric, floor=1e-4):
    """Largest componentwise relative error; components below ``floor`` compare absolutely."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / scale)) if a.size else 0.0


def mann_whitney(u_ind, u_ood):
    wins = 0.0
    for o in u_ood:
        for i in u_ind:
            if o > i:
                wins += 1.0
            elif o == i:
                wins += 0.5
    return wins / (len(u_ind) * len(u_ood))


def brute_pr_roc(u, is_ood):
    """Every operating point 'flag if u >= t' for each distinct t, highest first."""
    pts = []
    n_pos = sum(1 for o in is_ood if o)
    n_neg = len(u) - n_pos
    for t in sorted(set(u), reverse=True):
        tp = sum(1 for x, o in zip(u, is_ood) if o and x >= t)
        fp = sum(1 for x, o in zip(u, is_ood) if not o and x >= t)
        pts.append((tp, fp, n_pos, n_neg))
    return pts


def brute_aupr(u, is_ood):
    area, prev_recall = 0.0, 0.0
    for tp, fp, n_pos, _ in brute_pr_roc(u, is_ood):
        recall = tp / n_pos
        area += (tp / (tp + fp)) * (recall - prev_recall)
        prev_recall = recall
    return area


def brute_fpr(u, is_ood, target=0.95):
    for tp, fp, n_pos, n_neg in brute_pr_roc(u, is_ood):
        if tp / n_pos >= target - 1e-12:
            return fp / n_neg
    raise AssertionError("unreachable: the lowest threshold flags everything")


def naive_cov(z):
    m, d = len(z), len(z[0])
    mean = [sum(z[i][j] for i in range(m)) / m for j in range(d)]
    c = [[0.0] * d for _ in range(d)]
    for a in range(d):
        for b in range(d):
            c[a][b] = sum((z[i][a] - mean[a]) * (z[i][b] - mean[b]) for i in range(m)) / m
    return np.array(c)
