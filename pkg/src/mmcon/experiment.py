"""Training, evaluation and k-fold cross-validation.

A model is one encoder shared by every view, or two encoders (one for the
query view, one for the rest).  Patients are classified from the
concatenation of their view embeddings by a nearest-class-centroid rule
under cosine similarity; a logistic-regression probe is available as an
alternative head.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, kfold_split
from .errors import EmptyCounts, EmptyTestSet, InvalidConfig, NoPairs, ValidationError
from .losses import LOSS_KINDS, LossConfig, loss_and_grad
from .multiview import PairingPolicy, build_contrastive_batch
from .numerics import EncoderParams, encoder_backward, encoder_forward, init_encoder, sgd_step

HEADS = ("centroid", "linear")
AVERAGES = ("binary", "macro")
CHECKPOINT_FORMAT = "mmcon-encoder"
CHECKPOINT_VERSION = 1
METRIC_COLUMNS = ("fold", "accuracy", "precision", "recall", "f1", "alignment", "uniformity")


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "mmcon"
    # mean over anchors keeps the SGD step size independent of batch size
    loss: LossConfig = LossConfig(reduction="mean")
    epochs: int = 300
    batch_size: int = 50
    learning_rate: float = 0.001
    k_folds: int = 10
    rng_seed: int = 0
    policy: PairingPolicy = PairingPolicy()
    hidden_dim: int = 32
    embed_dim: int = 16
    activation: str = "relu"
    shared_encoder: bool = True
    views: tuple[int, ...] | None = None
    head: str = "centroid"
    average: str = "binary"
    stratified: bool = False

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidConfig(f"loss_kind must be one of {LOSS_KINDS}")
        if self.epochs < 1 or self.k_folds < 1:
            raise InvalidConfig("epochs and k_folds must be positive")
        if self.batch_size < 2:
            raise InvalidConfig("batch_size must be at least 2 patients")
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning_rate must be non-negative")
        if self.head not in HEADS:
            raise InvalidConfig(f"head must be one of {HEADS}")
        if self.average not in AVERAGES:
            raise InvalidConfig(f"average must be one of {AVERAGES}")
        if self.views is not None:
            views = tuple(int(v) for v in self.views)
            if not views or len(set(views)) != len(views):
                raise InvalidConfig("views must be a non-empty list of distinct view indices")
            if self.policy.query_view_index not in views:
                raise InvalidConfig("the query view must be among the selected views")
            object.__setattr__(self, "views", views)

    def view_indices(self, n_views: int) -> tuple[int, ...]:
        views = tuple(range(n_views)) if self.views is None else self.views
        if max(views) >= n_views:
            raise InvalidConfig(f"view index {max(views)} out of range for {n_views} views")
        return views

    def local_policy(self, n_views: int) -> PairingPolicy:
        """Policy with the query index expressed within the selected views."""
        views = self.view_indices(n_views)
        return replace(self.policy, query_view_index=views.index(self.policy.query_view_index))


@dataclass
class Model:
    """Encoders plus the view selection they were trained on."""

    encoders: list[EncoderParams]
    views: tuple[int, ...]
    query_view: int

    def embed(self, views_array: np.ndarray) -> np.ndarray:
        """(patients, all views, features) -> (patients, selected views, d)."""
        X = np.asarray(views_array, dtype=np.float64)[:, list(self.views), :]
        n, m, f = X.shape
        if len(self.encoders) == 1:
            return encoder_forward(self.encoders[0], X.reshape(n * m, f)).reshape(n, m, -1)
        q = self.views.index(self.query_view)
        out = np.empty((n, m, self.encoders[0].output_dim))
        others = [v for v in range(m) if v != q]
        out[:, q] = encoder_forward(self.encoders[0], X[:, q])
        if others:
            out[:, others] = encoder_forward(self.encoders[1], X[:, others].reshape(-1, f)).reshape(n, len(others), -1)
        return out

    def backward(self, views_array: np.ndarray, upstream: np.ndarray) -> list[EncoderParams]:
        X = np.asarray(views_array, dtype=np.float64)[:, list(self.views), :]
        n, m, f = X.shape
        if len(self.encoders) == 1:
            g, _ = encoder_backward(self.encoders[0], X.reshape(n * m, f), upstream.reshape(n * m, -1))
            return [g]
        q = self.views.index(self.query_view)
        others = [v for v in range(m) if v != q]
        g_query, _ = encoder_backward(self.encoders[0], X[:, q], upstream[:, q])
        if not others:
            return [g_query, _zeros_like(self.encoders[1])]
        g_rest, _ = encoder_backward(
            self.encoders[1], X[:, others].reshape(-1, f), upstream[:, others].reshape(n * len(others), -1)
        )
        return [g_query, g_rest]

    def step(self, grads: list[EncoderParams], learning_rate: float) -> "Model":
        return Model([sgd_step(e, g, learning_rate) for e, g in zip(self.encoders, grads)], self.views, self.query_view)

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return self.views == other.views and self.query_view == other.query_view and self.encoders == other.encoders


def _zeros_like(p: EncoderParams) -> EncoderParams:
    return EncoderParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases], p.activation, p.normalize_output)


def init_model(feature_dim: int, n_views: int, cfg: TrainConfig) -> Model:
    rng = np.random.default_rng([cfg.rng_seed, 0])
    dims = (feature_dim, cfg.hidden_dim, cfg.embed_dim)
    n_enc = 1 if cfg.shared_encoder else 2
    encoders = [init_encoder(dims, cfg.activation, True, seed=rng) for _ in range(n_enc)]
    return Model(encoders, cfg.view_indices(n_views), cfg.policy.query_view_index)


@dataclass
class TrainResult:
    model: Model
    loss_curve: list[float]


def _minibatches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[s:s + batch_size] for s in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train_fold(train: Dataset, cfg: TrainConfig, model: Model | None = None) -> TrainResult:
    """Mini-batch SGD on the configured contrastive loss.

    Patients are reshuffled every epoch from ``(rng_seed, epoch)``; a
    trailing mini-batch with a single patient is merged into the previous
    one.  Returns the final model and the mean mini-batch loss per epoch.
    """
    if len(train) < 2:
        raise ValidationError("training needs at least two patients")
    X = train.views_array()
    labels = train.labels
    if model is None:
        model = init_model(train.feature_dim, train.n_views, cfg)
    policy = cfg.local_policy(train.n_views)
    curve = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.rng_seed, 1, epoch]).permutation(len(train))
        losses = []
        for idx in _minibatches(order, cfg.batch_size):
            xb = X[idx]
            emb = model.embed(xb)
            n, m, d = emb.shape
            mv = build_contrastive_batch(labels[idx], emb, policy)
            value, grad = loss_and_grad(mv.batch, cfg.loss, cfg.loss_kind)
            view_grad = mv.to_view_grad(grad).reshape(n, m, d)
            model = model.step(model.backward(xb, view_grad), cfg.learning_rate)
            losses.append(value.scalar)
        curve.append(float(np.mean(losses)))
    return TrainResult(model, curve)


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        return cls(
            int(np.sum((y_pred == 1) & (y_true == 1))),
            int(np.sum((y_pred == 1) & (y_true == 0))),
            int(np.sum((y_pred == 0) & (y_true == 0))),
            int(np.sum((y_pred == 0) & (y_true == 1))),
        )


@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = ()


def _ratio(num, den, name, undefined):
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def compute_metrics(c: ConfusionCounts, average: str = "binary") -> ClassificationMetrics:
    """Accuracy/precision/recall/F1 for the positive class (or macro-averaged).

    Zero denominators yield 0 and are listed in ``undefined``.
    """
    if c.total == 0:
        raise EmptyCounts("no evaluated patients")
    undefined: list[str] = []
    accuracy = (c.tp + c.tn) / c.total
    if average == "binary":
        p = _ratio(c.tp, c.tp + c.fp, "precision", undefined)
        r = _ratio(c.tp, c.tp + c.fn, "recall", undefined)
        return ClassificationMetrics(accuracy, p, r, f1_score(p, r), tuple(undefined))
    if average != "macro":
        raise InvalidConfig(f"average must be one of {AVERAGES}")
    p1 = _ratio(c.tp, c.tp + c.fp, "precision[1]", undefined)
    r1 = _ratio(c.tp, c.tp + c.fn, "recall[1]", undefined)
    p0 = _ratio(c.tn, c.tn + c.fn, "precision[0]", undefined)
    r0 = _ratio(c.tn, c.tn + c.fp, "recall[0]", undefined)
    f1 = (f1_score(p1, r1) + f1_score(p0, r0)) / 2
    return ClassificationMetrics(accuracy, (p1 + p0) / 2, (r1 + r0) / 2, f1, tuple(undefined))


def alignment_uniformity(embeddings, positive_pairs, t: float = 2.0) -> tuple[float, float]:
    """Mean squared positive-pair distance, and log mean Gaussian potential.

    ``uniformity = log mean_{i<j} exp(-t * |z_i - z_j|^2)`` over all distinct
    pairs; ``t = 2`` by default.
    """
    Z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    pairs = np.asarray(positive_pairs, dtype=np.intp).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise NoPairs("alignment needs at least one positive pair")
    if Z.shape[0] < 2:
        raise NoPairs("uniformity needs at least two embeddings")
    alignment = float(np.mean(np.sum((Z[pairs[:, 0]] - Z[pairs[:, 1]]) ** 2, axis=1)))
    sq = np.sum(Z * Z, axis=1)
    dist2 = np.maximum(sq[:, None] + sq[None, :] - 2 * Z @ Z.T, 0.0)
    iu = np.triu_indices(Z.shape[0], k=1)
    uniformity = float(np.log(np.mean(np.exp(-t * dist2[iu]))))
    return alignment, uniformity


def positive_pairs(labels: Sequence[int], n_views: int, policy: PairingPolicy) -> np.ndarray:
    """(anchor row, positive row) pairs under ``policy`` in the flat view layout."""
    labels = np.asarray(labels)
    q, m = policy.query_view_index, n_views
    pairs = []
    for j in range(len(labels)):
        a = j * m + q
        pairs.extend((a, j * m + v) for v in range(m) if v != q)
        if policy.positive_scope == "same_patient_or_same_label":
            for k in range(len(labels)):
                if k != j and labels[k] == labels[j]:
                    pairs.extend((a, k * m + v) for v in range(m))
    return np.array(pairs, dtype=np.intp).reshape(-1, 2)


class NearestCentroid:
    """Cosine nearest-class-centroid classifier; ties go to class 0."""

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        self.centroids_ = {c: X[y == c].mean(axis=0) for c in (0, 1) if np.any(y == c)}
        if not self.centroids_:
            raise ValidationError("no training embeddings")
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if len(self.centroids_) == 1:
            return np.full(X.shape[0], next(iter(self.centroids_)))
        Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
        sims = {c: Xn @ (mu / np.linalg.norm(mu)) for c, mu in self.centroids_.items()}
        return np.where(sims[1] > sims[0], 1, 0)


class LinearProbe:
    """Logistic regression on frozen embeddings."""

    def fit(self, X, y):
        from sklearn.linear_model import LogisticRegression

        y = np.asarray(y)
        self.constant_ = int(y[0]) if np.all(y == y[0]) else None
        if self.constant_ is None:
            self.clf_ = LogisticRegression(max_iter=1000).fit(X, y)
        return self

    def predict(self, X):
        X = np.atleast_2d(X)
        if self.constant_ is not None:
            return np.full(X.shape[0], self.constant_)
        return self.clf_.predict(X).astype(int)


def make_head(name: str):
    return {"centroid": NearestCentroid, "linear": LinearProbe}[name]()


def patient_representations(model: Model, ds: Dataset) -> np.ndarray:
    """(patients, m*d) concatenated view embeddings, views in order."""
    emb = model.embed(ds.views_array())
    return emb.reshape(emb.shape[0], -1)


@dataclass
class FoldEvaluation:
    counts: ConfusionCounts
    alignment: float
    uniformity: float


def evaluate_fold(model: Model, train: Dataset, test: Dataset, policy: PairingPolicy = PairingPolicy(), head: str = "centroid") -> FoldEvaluation:
    """Fit the head on training embeddings, predict held-out patients.

    The head only ever sees test features; labels are read afterwards for
    counting.  Alignment/uniformity are measured on the test view embeddings.
    """
    if len(test) == 0:
        raise EmptyTestSet("no test patients")
    predictor = make_head(head).fit(patient_representations(model, train), train.labels)
    y_pred = predictor.predict(patient_representations(model, test))
    counts = ConfusionCounts.from_predictions(test.labels, y_pred)

    emb = model.embed(test.views_array())
    n, m, d = emb.shape
    local = replace(policy, query_view_index=model.views.index(model.query_view))
    try:
        align, unif = alignment_uniformity(emb.reshape(n * m, d), positive_pairs(test.labels, m, local))
    except NoPairs:
        align, unif = math.nan, math.nan
    return FoldEvaluation(counts, align, unif)


@dataclass
class FoldRow:
    fold: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    alignment: float
    uniformity: float


@dataclass
class MetricsReport:
    folds: list[FoldRow]
    mean: FoldRow
    pooled: FoldRow
    counts: list[ConfusionCounts]
    loss_curves: list[list[float]] = field(repr=False, default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.mean.accuracy

    def rows(self) -> list[FoldRow]:
        return self.folds + [self.mean, self.pooled]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows():
            writer.writerow([row.fold] + [_fmt(getattr(row, c)) for c in METRIC_COLUMNS[1:]])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


def _fold_job(args):
    ds, cfg, train_ids, test_ids, seed = args
    fold_cfg = replace(cfg, rng_seed=seed)
    train, test = ds.subset(train_ids), ds.subset(test_ids)
    result = train_fold(train, fold_cfg)
    ev = evaluate_fold(result.model, train, test, cfg.policy, cfg.head)
    return ev, result.loss_curve


def fold_seed(rng_seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([rng_seed, fold]).generate_state(1)[0])


def cross_validate(ds: Dataset, cfg: TrainConfig, jobs: int = 1) -> MetricsReport:
    """Train on k-1 folds, test on the held-out one, for every fold.

    Reports per-fold rows, their mean, and a pooled row computed from the
    summed confusion counts (alignment/uniformity are left blank there).
    """
    assignment = kfold_split(ds, cfg.k_folds, seed=cfg.rng_seed, stratified=cfg.stratified)
    jobs_args = []
    for f in range(cfg.k_folds):
        train_ids, test_ids = assignment.split(f)
        jobs_args.append((ds, cfg, train_ids, test_ids, fold_seed(cfg.rng_seed, f)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_job, jobs_args))
    else:
        results = [_fold_job(a) for a in jobs_args]

    rows, counts, curves = [], [], []
    for f, (ev, curve) in enumerate(results):
        m = compute_metrics(ev.counts, cfg.average)
        rows.append(FoldRow(str(f), m.accuracy, m.precision, m.recall, m.f1, ev.alignment, ev.uniformity))
        counts.append(ev.counts)
        curves.append(curve)
    mean = FoldRow("mean", *[float(np.mean([getattr(r, c) for r in rows])) for c in METRIC_COLUMNS[1:]])
    total = sum(counts, ConfusionCounts())
    pm = compute_metrics(total, cfg.average)
    pooled = FoldRow("pooled", pm.accuracy, pm.precision, pm.recall, pm.f1, math.nan, math.nan)
    return MetricsReport(rows, mean, pooled, counts, curves)


def write_metrics(report: MetricsReport, path) -> None:
    Path(path).write_text(report.to_csv(), encoding="utf-8")


def write_loss_curve(curves: list[list[float]], path) -> None:
    """One row per epoch, one column per fold (or a single training run)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch"] + [f"fold{f}" if len(curves) > 1 else "loss" for f in range(len(curves))])
        for epoch in range(max((len(c) for c in curves), default=0)):
            writer.writerow([epoch] + [repr(c[epoch]) if epoch < len(c) else "" for c in curves])


def save_checkpoint(model: Model, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "views": list(model.views),
        "query_view": model.query_view,
        "encoders": [
            {
                "activation": e.activation,
                "normalize_output": e.normalize_output,
                "layers": [
                    {"weights": [[float(x).hex() for x in row] for row in w], "bias": [float(x).hex() for x in b]}
                    for w, b in zip(e.weights, e.biases)
                ],
            }
            for e in model.encoders
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint format/version")
    encoders = []
    for e in doc["encoders"]:
        weights = [np.array([[float.fromhex(x) for x in row] for row in layer["weights"]]) for layer in e["layers"]]
        biases = [np.array([float.fromhex(x) for x in layer["bias"]]) for layer in e["layers"]]
        encoders.append(EncoderParams(weights, biases, e["activation"], bool(e["normalize_output"])))
    return Model(encoders, tuple(doc["views"]), int(doc["query_view"]))
