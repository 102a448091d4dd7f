"""Supervised contrastive losses with cosine and angular margins.

Three objectives share one per-anchor template::

    term_i = -1/|P(i)| * sum_{p in P(i)} log( exp(l_ip) / sum_{k in D(i)} exp(l_ik) )

and differ only in the logit ``l_ik`` built from the cosine ``c_ik``
between anchor ``i`` and candidate ``k``:

* ``supcon``      l = c / tau
* ``margin_con``  l = cos(theta + alpha) / tau, theta = arccos(c)
* ``mmcon``       l = (c - m) / tau

``D(i)`` is either the negatives ``A(i)`` (``negatives_only``) or
``P(i) | A(i)`` (``all_non_anchor``; every non-anchor row for batches whose
index sets cover the batch).  In ``literal`` margin mode the
margin is applied to every logit; in ``positive_only`` mode only to
logits of indices in ``P(i)``.  Literal mode with a scalar margin is a
no-op because ``exp(-m/tau)`` factors out of the ratio.

Embeddings are accepted unnormalized; every loss is a function of
cosines only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatch,
    EmptyDenominator,
    EmptyPositiveSet,
    InvalidConfig,
    NonFiniteLoss,
    ValidationError,
    ZeroNorm,
)

LOSS_KINDS = ("supcon", "margin_con", "mmcon")
DENOMINATOR_MODES = ("negatives_only", "all_non_anchor")
MARGIN_MODES = ("literal", "positive_only")
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    scalar_margin: float = 0.2
    angular_margin: float = 0.0
    denominator_mode: str = "negatives_only"
    margin_mode: str = "positive_only"
    reduction: str = "sum"

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise InvalidConfig(f"temperature must be positive, got {self.temperature}")
        if not self.scalar_margin >= 0:
            raise InvalidConfig(f"scalar_margin must be >= 0, got {self.scalar_margin}")
        if not 0 <= self.angular_margin < math.pi / 2:
            raise InvalidConfig(f"angular_margin must lie in [0, pi/2), got {self.angular_margin}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise InvalidConfig(f"denominator_mode must be one of {DENOMINATOR_MODES}")
        if self.margin_mode not in MARGIN_MODES:
            raise InvalidConfig(f"margin_mode must be one of {MARGIN_MODES}")
        if self.reduction not in REDUCTIONS:
            raise InvalidConfig(f"reduction must be one of {REDUCTIONS}")


@dataclass
class ContrastiveBatch:
    """Embeddings plus, for each anchor, its positive and negative index sets.

    ``anchors`` defaults to every row.  ``positives[j]`` / ``negatives[j]``
    belong to ``anchors[j]``.
    """

    embeddings: np.ndarray
    positives: list[np.ndarray]
    negatives: list[np.ndarray]
    anchors: np.ndarray = None

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        n = self.embeddings.shape[0]
        if self.anchors is None:
            self.anchors = np.arange(n)
        self.anchors = np.asarray(self.anchors, dtype=np.intp).reshape(-1)
        self.positives = [np.asarray(p, dtype=np.intp).reshape(-1) for p in self.positives]
        self.negatives = [np.asarray(a, dtype=np.intp).reshape(-1) for a in self.negatives]
        if not len(self.anchors) == len(self.positives) == len(self.negatives):
            raise DimensionMismatch("need one positive and one negative set per anchor")
        if len(np.unique(self.anchors)) != len(self.anchors):
            raise ValidationError("anchor indices must be unique")
        for i, p, a in zip(self.anchors, self.positives, self.negatives):
            idx = np.concatenate([[i], p, a])
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValidationError(f"anchor {i}: index out of range for {n} embeddings")
            if len(np.unique(p)) != p.size or len(np.unique(a)) != a.size:
                raise ValidationError(f"anchor {i}: repeated index within P or A")
            if i in p or i in a:
                raise ValidationError(f"anchor {i} appears in its own positive/negative set")
            if np.intersect1d(p, a).size:
                raise ValidationError(f"anchor {i}: P and A overlap")

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class LossValue:
    scalar: float
    per_anchor_terms: np.ndarray = field(repr=False)


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"cannot compare shapes {u.shape} and {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ZeroNorm("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def angle_between(u, v) -> float:
    return float(np.arccos(cosine_similarity(u, v)))


def _unit_rows(E):
    norms = np.linalg.norm(E, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNorm("batch contains a zero embedding")
    return E / norms, norms


def _masks(batch: ContrastiveBatch, cfg: LossConfig):
    k, n = len(batch.anchors), batch.size
    pos = np.zeros((k, n), dtype=bool)
    den = np.zeros((k, n), dtype=bool)
    for j, (i, p, a) in enumerate(zip(batch.anchors, batch.positives, batch.negatives)):
        if p.size == 0:
            raise EmptyPositiveSet(f"anchor {i} has no positives")
        pos[j, p] = True
        if cfg.denominator_mode == "negatives_only":
            if a.size == 0:
                raise EmptyDenominator(f"anchor {i} has no negatives")
            den[j, a] = True
        else:
            den[j, p] = True
            den[j, a] = True
    return pos, den


def _angular_logit(c, alpha):
    """cos(arccos(c) + alpha) and its derivative in c, with theta + alpha <= pi."""
    if alpha == 0:
        return c.copy(), np.ones_like(c)
    ca, sa = math.cos(alpha), math.sin(alpha)
    s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    val = c * ca - s * sa
    # at theta == 0 the angle is not differentiable; dc/du vanishes there, so
    # the zero subgradient is used
    with np.errstate(divide="ignore", invalid="ignore"):
        dval = np.where(s > 0, ca + c * sa / s, 0.0)
    # theta + alpha >= pi  <=>  c <= cos(pi - alpha) = -cos(alpha)
    clamped = c <= -ca
    val = np.where(clamped, -1.0, val)
    dval = np.where(clamped, 0.0, dval)
    return val, dval


def _logits(C, pos, kind, cfg):
    """Logit matrix and d(logit)/d(cosine), both shaped like ``C``."""
    tau = cfg.temperature
    if kind == "supcon":
        return C / tau, np.full_like(C, 1.0 / tau)
    margined = np.ones_like(pos) if cfg.margin_mode == "literal" else pos
    if kind == "mmcon":
        return (C - cfg.scalar_margin * margined) / tau, np.full_like(C, 1.0 / tau)
    if kind == "margin_con":
        val, dval = _angular_logit(C, cfg.angular_margin)
        val = np.where(margined, val, C)
        dval = np.where(margined, dval, 1.0)
        return val / tau, dval / tau
    raise InvalidConfig(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def _evaluate(batch: ContrastiveBatch, cfg: LossConfig, kind: str, want_grad: bool):
    pos, den = _masks(batch, cfg)
    U, norms = _unit_rows(batch.embeddings)
    A = U[batch.anchors]
    C = np.clip(A @ U.T, -1.0, 1.0)
    L, dL = _logits(C, pos, kind, cfg)

    masked = np.where(den, L, -np.inf)
    lse = logsumexp(masked, axis=1)
    npos = pos.sum(axis=1)
    terms = lse - np.where(pos, L, 0.0).sum(axis=1) / npos
    scale = 1.0 / len(batch.anchors) if cfg.reduction == "mean" else 1.0
    total = float(terms.sum() * scale)
    if not np.isfinite(total):
        raise NonFiniteLoss(f"{kind} loss is not finite")
    if not want_grad:
        return LossValue(total, terms), None

    soft = np.where(den, np.exp(masked - lse[:, None]), 0.0)
    dterm_dL = soft - pos / npos[:, None]
    # only entries that actually enter the loss carry a derivative
    with np.errstate(invalid="ignore"):
        G = np.where(den | pos, dterm_dL * dL, 0.0) * scale
    if not np.all(np.isfinite(G)):
        raise NonFiniteLoss(f"{kind} gradient is not finite (cosine at +/-1 with angular margin?)")
    dU = G.T @ A
    dU[batch.anchors] += G @ U
    dE = (dU - np.sum(dU * U, axis=1, keepdims=True) * U) / norms
    return LossValue(total, terms), dE


def supcon_loss(batch: ContrastiveBatch, cfg: LossConfig) -> LossValue:
    return _evaluate(batch, cfg, "supcon", False)[0]


def margin_con_loss(batch: ContrastiveBatch, cfg: LossConfig) -> LossValue:
    return _evaluate(batch, cfg, "margin_con", False)[0]


def mmcon_loss(batch: ContrastiveBatch, cfg: LossConfig) -> LossValue:
    return _evaluate(batch, cfg, "mmcon", False)[0]


def compute_loss(batch: ContrastiveBatch, cfg: LossConfig, loss_kind: str) -> LossValue:
    return _evaluate(batch, cfg, loss_kind, False)[0]


def loss_backward(batch: ContrastiveBatch, cfg: LossConfig, loss_kind: str) -> np.ndarray:
    """Gradient of the chosen loss w.r.t. every (raw) embedding row."""
    return _evaluate(batch, cfg, loss_kind, True)[1]


def loss_and_grad(batch: ContrastiveBatch, cfg: LossConfig, loss_kind: str):
    return _evaluate(batch, cfg, loss_kind, True)


def random_batch(
    rng: np.random.Generator,
    n: int,
    dim: int = 4,
    normalize: bool = True,
    all_anchors: bool = True,
) -> ContrastiveBatch:
    """Random embeddings with random non-empty P(i) and A(i) per anchor.

    Used by the oracle checks and tests.  ``n`` must be at least 3.
    """
    if n < 3:
        raise ValidationError("random batches need at least 3 embeddings")
    E = rng.normal(size=(n, dim))
    if normalize:
        E /= np.linalg.norm(E, axis=1, keepdims=True)
    anchors = np.arange(n) if all_anchors else np.sort(rng.choice(n, size=rng.integers(1, n + 1), replace=False))
    positives, negatives = [], []
    for i in anchors:
        others = rng.permutation(np.delete(np.arange(n), i))
        n_pos = rng.integers(1, len(others))
        positives.append(np.sort(others[:n_pos]))
        negatives.append(np.sort(others[n_pos:]))
    return ContrastiveBatch(E, positives, negatives, anchors)


def permute_batch(batch: ContrastiveBatch, perm: Sequence[int]) -> ContrastiveBatch:
    """Reorder embeddings so that new row ``perm[r]`` holds old row ``r``."""
    perm = np.asarray(perm)
    E = np.empty_like(batch.embeddings)
    E[perm] = batch.embeddings
    return ContrastiveBatch(
        E,
        [perm[p] for p in batch.positives],
        [perm[a] for a in batch.negatives],
        perm[batch.anchors],
    )
