"""Synthetic multi-view patients, the dataset text format, and k-fold splits.

File format (UTF-8, comma-delimited)::

    patient_id,view_id,label,f0,f1,...,f{d-1}
    P0000,0,1,0.123...,...

one row per (patient, view).  Floats are written with ``repr`` (shortest
string that round-trips), so reading a written file gives back the same
bits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import ortho_group

from .errors import DuplicatePatient, InconsistentRow, InvalidConfig, MalformedHeader, TooManyFolds, ValidationError
from .multiview import MultiViewSample

SCHEMA_VERSION = 1
COHORT_CLASS_BALANCE = 138 / 502


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 200
    n_views: int = 4
    feature_dim: int = 16
    class_balance: float = COHORT_CLASS_BALANCE
    cluster_separation: float = 6.0
    per_view_rotation_seed: int = 1
    noise_sigma: float = 0.5
    label_noise: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_patients", "n_views", "feature_dim"):
            if int(getattr(self, name)) <= 0:
                raise InvalidConfig(f"{name} must be a positive integer")
        if not 0 < self.class_balance < 1:
            raise InvalidConfig("class_balance must lie in (0, 1)")
        if not self.cluster_separation >= 0:
            raise InvalidConfig("cluster_separation must be non-negative")
        if not self.noise_sigma >= 0:
            raise InvalidConfig("noise_sigma must be non-negative")
        if not 0 <= self.label_noise < 0.5:
            raise InvalidConfig("label_noise must lie in [0, 0.5)")


@dataclass
class Dataset:
    samples: list[MultiViewSample]
    provenance: str = field(default="synthetic", compare=False)
    schema_version: int = field(default=SCHEMA_VERSION, compare=False)

    def __post_init__(self):
        ids = [s.patient_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DuplicatePatient("patient ids must be unique")
        if self.samples:
            shapes = {s.views.shape for s in self.samples}
            if len(shapes) != 1:
                raise InconsistentRow(f"samples disagree on (views, features): {sorted(shapes)}")

    def __len__(self):
        return len(self.samples)

    @property
    def n_views(self) -> int:
        return self.samples[0].n_views

    @property
    def feature_dim(self) -> int:
        return self.samples[0].feature_dim

    @property
    def patient_ids(self) -> list[str]:
        return [s.patient_id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def views_array(self) -> np.ndarray:
        """(patients, views, features) array."""
        return np.stack([s.views for s in self.samples])

    def subset(self, patient_ids) -> "Dataset":
        keep = set(patient_ids)
        return Dataset([s for s in self.samples if s.patient_id in keep], self.provenance)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Two Gaussian classes seen through per-view orthogonal maps.

    Class centroids sit at +/- separation/2 along a random unit direction.
    Each patient's latent point is its centroid plus N(0, I); view ``v`` is
    ``Q_v @ latent + N(0, noise_sigma^2 I)`` with ``Q_v`` a fixed random
    orthogonal matrix drawn from ``per_view_rotation_seed``.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    d, n, m = cfg.feature_dim, cfg.n_patients, cfg.n_views
    n_pos = int(round(cfg.class_balance * n))
    labels = np.zeros(n, dtype=int)
    labels[:n_pos] = 1
    labels = rng.permutation(labels)

    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    centroids = np.stack([-0.5 * cfg.cluster_separation * direction, 0.5 * cfg.cluster_separation * direction])
    latent = centroids[labels] + rng.normal(size=(n, d))

    rot_rng = np.random.default_rng(cfg.per_view_rotation_seed)
    if d == 1:
        rotations = [np.array([[1.0]]) for _ in range(m)]
    else:
        rotations = [ortho_group.rvs(d, random_state=rot_rng) for _ in range(m)]
    views = np.stack([latent @ Q.T for Q in rotations], axis=1)
    views = views + cfg.noise_sigma * rng.normal(size=views.shape)

    flips = rng.random(n) < cfg.label_noise
    labels = np.where(flips, 1 - labels, labels)
    width = max(4, len(str(n - 1)))
    samples = [MultiViewSample(f"P{j:0{width}d}", views[j], int(labels[j])) for j in range(n)]
    return Dataset(samples, "synthetic")


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["patient_id", "view_id", "label"] + [f"f{k}" for k in range(ds.feature_dim)])
        for s in ds.samples:
            for v, row in enumerate(s.views):
                writer.writerow([s.patient_id, v, s.label] + [repr(float(x)) for x in row])


def read_dataset(path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["patient_id", "view_id", "label"]:
            raise MalformedHeader(f"{path}: header must start with patient_id,view_id,label")
        d = len(header) - 3
        if d == 0 or header[3:] != [f"f{k}" for k in range(d)]:
            raise MalformedHeader(f"{path}: feature columns must be f0..f{{d-1}}")
        rows: dict[str, dict[int, np.ndarray]] = {}
        labels: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 3:
                raise InconsistentRow(f"{path}:{lineno}: expected {d + 3} fields, found {len(row)}")
            pid = row[0]
            try:
                view = int(row[1])
                label = int(row[2])
                feats = np.array([float(x) for x in row[3:]])
            except ValueError as exc:
                raise InconsistentRow(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(feats)):
                raise InconsistentRow(f"{path}:{lineno}: non-finite feature value")
            if label not in (0, 1):
                raise InconsistentRow(f"{path}:{lineno}: label must be 0 or 1")
            views = rows.setdefault(pid, {})
            if view in views:
                raise DuplicatePatient(f"{path}:{lineno}: duplicate (patient_id, view_id) = ({pid}, {view})")
            if labels.setdefault(pid, label) != label:
                raise InconsistentRow(f"{path}:{lineno}: patient {pid} has conflicting labels")
            views[view] = feats
    if not rows:
        raise InconsistentRow(f"{path}: no data rows")
    m = max(len(v) for v in rows.values())
    samples = []
    for pid, views in rows.items():
        if sorted(views) != list(range(m)):
            raise InconsistentRow(f"{path}: patient {pid} has views {sorted(views)}, expected 0..{m - 1}")
        samples.append(MultiViewSample(pid, np.stack([views[v] for v in range(m)]), labels[pid]))
    return Dataset(samples, "file")


@dataclass
class FoldAssignment:
    k: int
    folds: dict[str, int]

    def fold_members(self, fold: int) -> list[str]:
        return [pid for pid, f in self.folds.items() if f == fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.folds.values():
            counts[f] += 1
        return counts

    def split(self, fold: int) -> tuple[list[str], list[str]]:
        """(train ids, test ids) with ``fold`` held out."""
        train = [pid for pid, f in self.folds.items() if f != fold]
        return train, self.fold_members(fold)

    def write(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["patient_id", "fold"])
            for pid, f in self.folds.items():
                writer.writerow([pid, f])

    @classmethod
    def read(cls, path) -> "FoldAssignment":
        with Path(path).open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["patient_id", "fold"]:
                raise MalformedHeader(f"{path}: expected header patient_id,fold")
            folds = {row[0]: int(row[1]) for row in reader if row}
        return cls(max(folds.values()) + 1, folds)


def kfold_split(ds: Dataset, k: int, seed=0, stratified: bool = False) -> FoldAssignment:
    """Seeded shuffle of patients, then round-robin fold assignment.

    With ``stratified`` each class is shuffled separately and the classes
    are dealt one after the other, so fold sizes still differ by at most one.
    """
    n = len(ds)
    if k < 1:
        raise ValidationError("k must be positive")
    if k > n:
        raise TooManyFolds(f"cannot make {k} folds from {n} patients")
    rng = np.random.default_rng(seed)
    ids = ds.patient_ids
    if stratified:
        labels = ds.labels
        order = []
        for c in (0, 1):
            members = [ids[j] for j in range(n) if labels[j] == c]
            order.extend(members[j] for j in rng.permutation(len(members)))
    else:
        order = [ids[j] for j in rng.permutation(n)]
    return FoldAssignment(k, {pid: pos % k for pos, pid in enumerate(order)})


def expected_fold_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if f < extra else 0) for f in range(k)]


def cohort_config(rng_seed: int = 0) -> SyntheticConfig:
    """Shape of the 502-patient, 4-view cohort (138 positives)."""
    return SyntheticConfig(n_patients=502, n_views=4, class_balance=COHORT_CLASS_BALANCE, rng_seed=rng_seed)


def describe(ds: Dataset) -> dict:
    labels = ds.labels
    return {
        "patients": len(ds),
        "views": ds.n_views,
        "feature_dim": ds.feature_dim,
        "positives": int(labels.sum()),
        "rows": len(ds) * ds.n_views,
        "positive_fraction": float(labels.mean()) if len(ds) else math.nan,
    }
