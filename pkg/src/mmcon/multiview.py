"""Turning per-patient view embeddings into contrastive batches.

Layout: patient ``j``'s view ``v`` sits at row ``j * m + v`` of the
flattened view-embedding matrix.  The anchor of patient ``j`` is its
query view (``policy.query_view_index``, the T1 slot by default).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, MixedDimensions, SingletonBatch, ValidationError, ZeroNorm
from .losses import ContrastiveBatch, cosine_similarity

POSITIVE_SCOPES = ("same_patient_views", "same_patient_or_same_label")
AGGREGATIONS = ("per_pair", "mean_of_positives")


@dataclass(frozen=True)
class MultiViewSample:
    patient_id: str
    views: np.ndarray
    label: int

    def __post_init__(self):
        views = np.atleast_2d(np.asarray(self.views, dtype=np.float64))
        object.__setattr__(self, "views", views)
        if self.label not in (0, 1):
            raise ValidationError(f"patient {self.patient_id}: label must be 0 or 1, got {self.label}")

    @property
    def n_views(self) -> int:
        return self.views.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.views.shape[1]

    def __eq__(self, other):
        if not isinstance(other, MultiViewSample):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.label == other.label
            and np.array_equal(self.views, other.views)
        )

    __hash__ = None


@dataclass(frozen=True)
class PairingPolicy:
    positive_scope: str = "same_patient_views"
    aggregation: str = "per_pair"
    query_view_index: int = 0

    def __post_init__(self):
        if self.positive_scope not in POSITIVE_SCOPES:
            raise InvalidConfig(f"positive_scope must be one of {POSITIVE_SCOPES}")
        if self.aggregation not in AGGREGATIONS:
            raise InvalidConfig(f"aggregation must be one of {AGGREGATIONS}")
        if self.query_view_index < 0:
            raise InvalidConfig("query_view_index must be non-negative")


@dataclass
class MultiViewBatch:
    """A contrastive batch plus the linear map back to view embeddings.

    ``batch.embeddings == mixing @ view_embeddings``; gradients w.r.t. the
    batch rows map back through ``mixing.T``.  ``mixing`` is ``None`` when
    the batch rows are the view embeddings themselves.
    """

    batch: ContrastiveBatch
    mixing: np.ndarray | None = None

    def to_view_grad(self, grad: np.ndarray) -> np.ndarray:
        return grad if self.mixing is None else self.mixing.T @ grad


def _check_shapes(labels, view_embeddings, policy):
    E = np.asarray(view_embeddings, dtype=np.float64)
    if E.ndim != 3:
        raise MixedDimensions(f"expected (patients, views, dim) embeddings, got shape {E.shape}")
    n, m, _ = E.shape
    if len(labels) != n:
        raise MixedDimensions(f"{len(labels)} labels for {n} patients")
    if n < 2:
        raise SingletonBatch("a contrastive batch needs at least two patients")
    if policy.query_view_index >= m:
        raise InvalidConfig(f"query_view_index {policy.query_view_index} with only {m} views")
    return E


def build_contrastive_batch(labels: Sequence[int], view_embeddings, policy: PairingPolicy = PairingPolicy()) -> MultiViewBatch:
    """Assemble anchors, P(i) and A(i) for one mini-batch of patients.

    ``view_embeddings`` has shape ``(patients, views, dim)``.  Negatives are
    all views of other patients, minus any label-positives under the
    ``same_patient_or_same_label`` scope.  With ``mean_of_positives`` one
    extra row per patient (the mean of its positives) is appended and
    serves as the patient's single positive.
    """
    labels = np.asarray(labels)
    E = _check_shapes(labels, view_embeddings, policy)
    n, m, d = E.shape
    q = policy.query_view_index
    flat = E.reshape(n * m, d)
    anchors = np.arange(n) * m + q
    positives, negatives = [], []
    for j in range(n):
        own = np.array([j * m + v for v in range(m) if v != q], dtype=np.intp)
        if policy.positive_scope == "same_patient_or_same_label":
            mates = [k for k in range(n) if k != j and labels[k] == labels[j]]
            extra = np.array([k * m + v for k in mates for v in range(m)], dtype=np.intp)
            pos = np.concatenate([own, extra])
            others = [k for k in range(n) if labels[k] != labels[j]]
        else:
            pos = own
            others = [k for k in range(n) if k != j]
        neg = np.array([k * m + v for k in others for v in range(m)], dtype=np.intp)
        positives.append(np.sort(pos))
        negatives.append(neg)

    if policy.aggregation == "per_pair":
        return MultiViewBatch(ContrastiveBatch(flat, positives, negatives, anchors))

    mixing = np.zeros((n * m + n, n * m))
    mixing[: n * m, : n * m] = np.eye(n * m)
    mean_pos = []
    for j, pos in enumerate(positives):
        if pos.size == 0:
            raise ValidationError(f"patient {j} has no positives to average")
        mixing[n * m + j, pos] = 1.0 / pos.size
        mean_pos.append(np.array([n * m + j]))
    return MultiViewBatch(ContrastiveBatch(mixing @ flat, mean_pos, negatives, anchors), mixing)


def multiview_similarity(query_embedding, positive_embeddings, policy: PairingPolicy = PairingPolicy()) -> list[float]:
    positives = np.atleast_2d(np.asarray(positive_embeddings, dtype=np.float64))
    if policy.aggregation == "per_pair":
        return [cosine_similarity(query_embedding, p) for p in positives]
    if np.any(np.linalg.norm(positives, axis=1) == 0):
        raise ZeroNorm("positive embedding has zero norm")
    return [cosine_similarity(query_embedding, positives.mean(axis=0))]


def concat_patient_representation(per_view_embeddings) -> np.ndarray:
    """Concatenate one patient's view embeddings in view order (length m*d)."""
    rows = [np.asarray(e, dtype=np.float64).reshape(-1) for e in per_view_embeddings]
    if not rows or len({r.size for r in rows}) != 1:
        raise MixedDimensions("view embeddings must all have the same length")
    return np.concatenate(rows)
