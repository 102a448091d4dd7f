"""Brute-force reference losses.

Plain Python loops over ``math``: explicit dot products, explicit
``acos``/``cos`` for angles, direct ``exp`` sums with no max-shift.  They
share nothing with the vectorized path in :mod:`mmcon.losses` beyond the
batch container, and are only valid for moderate ``1/tau`` (no overflow).
"""

from __future__ import annotations

import math

import numpy as np

from .losses import ContrastiveBatch, LossConfig, compute_loss, random_batch, LOSS_KINDS


def _cos(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return max(-1.0, min(1.0, dot / (nu * nv)))


def _similarity(kind, cfg, c, margined):
    if kind == "supcon" or not margined:
        return c
    if kind == "mmcon":
        return c - cfg.scalar_margin
    theta = math.acos(c)
    return math.cos(min(theta + cfg.angular_margin, math.pi))


def naive_loss(batch: ContrastiveBatch, cfg: LossConfig, kind: str) -> float:
    E = [list(map(float, row)) for row in batch.embeddings]
    literal = cfg.margin_mode == "literal"
    total = 0.0
    for i, P, A in zip(batch.anchors, batch.positives, batch.negatives):
        P, A = set(int(p) for p in P), set(int(a) for a in A)
        if cfg.denominator_mode == "negatives_only":
            denom_idx = sorted(A)
        else:
            denom_idx = sorted(P | A)
        denom = 0.0
        for k in denom_idx:
            s = _similarity(kind, cfg, _cos(E[i], E[k]), literal or k in P)
            denom += math.exp(s / cfg.temperature)
        term = 0.0
        for p in sorted(P):
            s = _similarity(kind, cfg, _cos(E[i], E[p]), True)
            term += -math.log(math.exp(s / cfg.temperature) / denom)
        total += term / len(P)
    if cfg.reduction == "mean":
        total /= len(batch.anchors)
    return total


def oracle_sweep(n_batches: int = 100, max_n: int = 8, seed: int = 0, temperature: float = 0.07):
    """Compare vectorized and naive losses on random batches.

    Every batch is checked under all three loss kinds and all four
    (denominator, margin) mode pairs.  Returns the largest absolute
    difference seen and the number of comparisons.
    """
    rng = np.random.default_rng(seed)
    worst, count = 0.0, 0
    for _ in range(n_batches):
        n = int(rng.integers(3, max_n + 1))
        batch = random_batch(rng, n, dim=int(rng.integers(2, 6)), normalize=bool(rng.integers(2)))
        alpha = float(rng.uniform(0.0, 1.2))
        m = float(rng.uniform(0.0, 0.6))
        for den in ("negatives_only", "all_non_anchor"):
            for mode in ("literal", "positive_only"):
                cfg = LossConfig(temperature, m, alpha, den, mode)
                for kind in LOSS_KINDS:
                    fast = compute_loss(batch, cfg, kind).scalar
                    slow = naive_loss(batch, cfg, kind)
                    worst = max(worst, abs(fast - slow))
                    count += 1
    return worst, count
