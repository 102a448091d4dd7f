import numpy as np
import pytest

from mmcon.data import (
    Dataset,
    FoldAssignment,
    SyntheticConfig,
    expected_fold_sizes,
    generate_synthetic,
    kfold_split,
    read_dataset,
    cohort_config,
    write_dataset,
)
from mmcon.errors import DuplicatePatient, InconsistentRow, InvalidConfig, MalformedHeader, TooManyFolds
from mmcon.experiment import NearestCentroid


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticConfig(n_patients=30, n_views=3, feature_dim=5, rng_seed=4))


class TestGenerate:
    def test_cohort_shape(self):
        ds = generate_synthetic(cohort_config())
        assert len(ds) == 502
        assert ds.n_views == 4
        assert int(ds.labels.sum()) == 138
        assert len(ds) * ds.n_views == 2008

    def test_deterministic(self):
        cfg = SyntheticConfig(n_patients=40, rng_seed=9)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        assert a == b
        assert a.views_array().tobytes() == b.views_array().tobytes()

    def test_positive_count_before_label_noise(self):
        for n, bal in [(10, 0.3), (99, 0.5), (7, 0.9)]:
            ds = generate_synthetic(SyntheticConfig(n_patients=n, class_balance=bal))
            assert ds.labels.sum() == round(bal * n)

    def test_label_noise_flips_some(self):
        clean = generate_synthetic(SyntheticConfig(n_patients=200, label_noise=0.0))
        noisy = generate_synthetic(SyntheticConfig(n_patients=200, label_noise=0.3))
        np.testing.assert_array_equal(clean.views_array(), noisy.views_array())
        assert 0 < np.sum(clean.labels != noisy.labels) < 120

    def test_views_are_rotations_of_shared_latent(self):
        ds = generate_synthetic(SyntheticConfig(n_patients=50, noise_sigma=0.0, feature_dim=6))
        V = ds.views_array()
        # noiseless views differ only by orthogonal maps: per-patient norms agree
        norms = np.linalg.norm(V, axis=2)
        np.testing.assert_allclose(norms, norms[:, :1].repeat(V.shape[1], axis=1), rtol=1e-12)

    def test_zero_separation_is_uninformative(self):
        ds = generate_synthetic(SyntheticConfig(n_patients=2000, cluster_separation=0.0, class_balance=0.5, rng_seed=3))
        X, y = ds.views_array().reshape(len(ds), -1), ds.labels
        half = len(ds) // 2
        acc = np.mean(NearestCentroid().fit(X[:half], y[:half]).predict(X[half:]) == y[half:])
        # binomial sd at n=1000 is ~0.016
        assert abs(acc - 0.5) < 0.06

    @pytest.mark.parametrize(
        "kwargs",
        [dict(n_patients=0), dict(class_balance=1.0), dict(noise_sigma=-1.0), dict(label_noise=0.5), dict(cluster_separation=-2.0)],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            SyntheticConfig(**kwargs)


class TestFileFormat:
    def test_roundtrip_exact(self, small, tmp_path):
        path = tmp_path / "ds.csv"
        write_dataset(small, path)
        back = read_dataset(path)
        assert back == small
        assert back.views_array().tobytes() == small.views_array().tobytes()
        assert back.provenance == "file"

    def test_header(self, small, tmp_path):
        path = tmp_path / "ds.csv"
        write_dataset(small, path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first == "patient_id,view_id,label,f0,f1,f2,f3,f4"
        assert len(path.read_text().splitlines()) == 1 + 30 * 3

    def test_inconsistent_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("patient_id,view_id,label,f0,f1\nA,0,1,0.5,0.2\nA,1,1,0.5\n", encoding="utf-8")
        with pytest.raises(InconsistentRow):
            read_dataset(path)

    def test_duplicate(self, tmp_path):
        path = tmp_path / "dup.csv"
        path.write_text("patient_id,view_id,label,f0\nA,0,1,0.5\nA,0,1,0.7\n", encoding="utf-8")
        with pytest.raises(DuplicatePatient):
            read_dataset(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("id,view,label,f0\nA,0,1,0.5\n", encoding="utf-8")
        with pytest.raises(MalformedHeader):
            read_dataset(path)

    def test_missing_view(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("patient_id,view_id,label,f0\nA,0,1,0.5\nA,1,1,0.1\nB,0,0,0.2\n", encoding="utf-8")
        with pytest.raises(InconsistentRow):
            read_dataset(path)

    def test_conflicting_label(self, tmp_path):
        path = tmp_path / "lab.csv"
        path.write_text("patient_id,view_id,label,f0\nA,0,1,0.5\nA,1,0,0.1\n", encoding="utf-8")
        with pytest.raises(InconsistentRow):
            read_dataset(path)

    def test_dataset_rejects_duplicate_ids(self, small):
        with pytest.raises(DuplicatePatient):
            Dataset([small.samples[0], small.samples[0]])


class TestKFold:
    def test_cohort_fold_sizes(self):
        ds = generate_synthetic(cohort_config())
        folds = kfold_split(ds, 10, seed=0)
        assert sorted(folds.sizes(), reverse=True) == [51, 51] + [50] * 8
        assert expected_fold_sizes(502, 10) == [51, 51] + [50] * 8

    def test_leave_one_out(self, small):
        folds = kfold_split(small, len(small), seed=1)
        assert folds.sizes() == [1] * len(small)

    def test_deterministic(self, small):
        assert kfold_split(small, 4, seed=5).folds == kfold_split(small, 4, seed=5).folds
        assert kfold_split(small, 4, seed=5).folds != kfold_split(small, 4, seed=6).folds

    @pytest.mark.parametrize("stratified", [False, True])
    def test_partition(self, small, stratified):
        folds = kfold_split(small, 7, seed=2, stratified=stratified)
        members = [set(folds.fold_members(f)) for f in range(7)]
        assert set().union(*members) == set(small.patient_ids)
        assert sum(len(m) for m in members) == len(small)
        assert max(folds.sizes()) - min(folds.sizes()) <= 1

    def test_stratified_balances_labels(self):
        ds = generate_synthetic(SyntheticConfig(n_patients=100, class_balance=0.3))
        folds = kfold_split(ds, 5, seed=0, stratified=True)
        label = dict(zip(ds.patient_ids, ds.labels))
        for f in range(5):
            assert sum(label[p] for p in folds.fold_members(f)) == 6

    def test_too_many_folds(self, small):
        with pytest.raises(TooManyFolds):
            kfold_split(small, 31)

    def test_export_roundtrip(self, small, tmp_path):
        folds = kfold_split(small, 3, seed=0)
        folds.write(tmp_path / "folds.csv")
        back = FoldAssignment.read(tmp_path / "folds.csv")
        assert back.k == 3 and back.folds == folds.folds
