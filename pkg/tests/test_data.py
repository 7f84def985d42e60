import numpy as np
import pytest

from autofocal.data import Dataset, DatasetSpec, generate, load_csv, save_csv, split
from autofocal.errors import DomainError


def all_labels(splits):
    return np.concatenate([s.labels for s in splits])


class TestGenerate:
    def test_balanced_blobs(self):
        splits = generate(DatasetSpec(n_samples=2000, imbalance_ratio=1.0, seed=3))
        counts = np.bincount(all_labels(splits))
        assert abs(counts[0] - counts[1]) <= 0.05 * counts.mean()

    def test_ratio_one_to_hundred(self):
        splits = generate(DatasetSpec(n_samples=10100, imbalance_ratio=100.0))
        counts = np.bincount(all_labels(splits))
        assert counts[1] == 100
        assert counts[0] / counts[1] == pytest.approx(100.0, rel=0.05)

    @pytest.mark.parametrize("ratio,classes", [(10.0, 3), (50.0, 2), (3.0, 4)])
    def test_ratio_within_five_percent(self, ratio, classes):
        splits = generate(DatasetSpec(n_samples=5000, n_classes=classes, imbalance_ratio=ratio, seed=1))
        counts = np.bincount(all_labels(splits), minlength=classes)
        for c in range(1, classes):
            assert counts[0] / counts[c] == pytest.approx(ratio, rel=0.05)

    def test_multilabel_ratio(self):
        spec = DatasetSpec(kind="multilabel-synthetic", n_samples=5000, n_classes=4, imbalance_ratio=9.0)
        masks = all_labels(generate(spec))
        assert masks.shape == (5000, 4)
        positive = masks.any(axis=1).sum()
        assert (5000 - positive) / positive == pytest.approx(9.0, rel=0.05)

    def test_noise_free_regression(self):
        spec = DatasetSpec(kind="noisy-regression", n_samples=500, n_features=3, n_targets=2, noise_std=0.0)
        full = generate(spec).full
        np.testing.assert_array_equal(full.labels, full.clean_labels)

    @pytest.mark.parametrize("function", ["affine", "sine"])
    def test_noise_std_law_of_large_numbers(self, function):
        spec = DatasetSpec(kind="noisy-regression", n_samples=100_000, n_features=2, noise_std=0.3,
                           outlier_fraction=0.05, outlier_magnitude=8.0, function=function, seed=4)
        full = generate(spec).full
        inliers = ~full.outlier_mask
        resid = (full.labels - full.clean_labels)[inliers]
        assert resid.std() == pytest.approx(0.3, rel=0.03)
        assert full.outlier_mask.sum() == 5000
        assert np.all(np.abs((full.labels - full.clean_labels)[~inliers]) > 4.0)

    @pytest.mark.parametrize("kwargs", [
        dict(n_samples=50, imbalance_ratio=1000.0),
        dict(kind="multilabel-synthetic", n_samples=10, imbalance_ratio=100.0),
    ])
    def test_infeasible(self, kwargs):
        with pytest.raises(DomainError):
            generate(DatasetSpec(**kwargs))

    @pytest.mark.parametrize("kwargs", [
        dict(n_samples=0), dict(imbalance_ratio=0.5), dict(outlier_fraction=1.0), dict(kind="images"),
        dict(val_fraction=0.5, test_fraction=0.5), dict(kind="csv-file"),
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(DomainError):
            DatasetSpec(**kwargs)

    @pytest.mark.parametrize("kind", ["imbalanced-blobs", "multilabel-synthetic", "noisy-regression"])
    def test_deterministic(self, kind):
        spec = DatasetSpec(kind=kind, n_samples=800, n_classes=3, imbalance_ratio=4.0, seed=12)
        a, b = generate(spec), generate(spec)
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)
            assert np.array_equal(x.labels, y.labels)
        c = generate(DatasetSpec(kind=kind, n_samples=800, n_classes=3, imbalance_ratio=4.0, seed=13))
        assert not np.array_equal(a.train.features, c.train.features)

    def test_split_disjoint_and_exhaustive(self):
        splits = generate(DatasetSpec(n_samples=1001, val_fraction=0.2, test_fraction=0.1))
        idx = [s.indices for s in splits]
        merged = np.concatenate(idx)
        assert len(merged) == len(set(merged.tolist())) == 1001
        assert set(merged.tolist()) == set(range(1001))
        assert len(splits.test) == 100 and len(splits.val) == 200
        for s in splits:
            np.testing.assert_array_equal(s.features, splits.full.features[s.indices])

    def test_split_leaves_no_training(self):
        ds = Dataset(np.zeros((1, 2)), np.zeros(1, dtype=int), "classification")
        with pytest.raises(DomainError):
            split(ds, 0.0, 0.9, 0)


class TestCsv:
    def test_three_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,label\n0.5,1,0\n-2,3.25,1\n1e-3,0,2\n")
        ds = load_csv(path, "classification")
        assert len(ds) == 3
        assert ds.feature_names == ["a", "b"]
        np.testing.assert_array_equal(ds.labels, [0, 1, 2])
        assert ds.n_classes == 3
        feats, label = next(iter(ds.samples()))
        np.testing.assert_array_equal(feats, [0.5, 1.0])
        assert label == 0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DomainError, match="empty"):
            load_csv(path, "classification")

    def test_header_only(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("a,label\n")
        with pytest.raises(DomainError):
            load_csv(path, "classification")

    def test_parse_error_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1,2,0\n1,oops,1\n")
        with pytest.raises(DomainError, match=r"row 3, column 'b'"):
            load_csv(path, "classification")

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1,2\n")
        with pytest.raises(DomainError, match="row 2"):
            load_csv(path, "classification")

    def test_schema_mismatch(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,label\n1,2,0\n")
        with pytest.raises(DomainError, match="missing"):
            load_csv(path, "regression", label_columns=["y"])

    def test_fractional_class_label(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,label\n1,0.5\n")
        with pytest.raises(DomainError):
            load_csv(path, "classification")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DomainError):
            load_csv(tmp_path / "nope.csv", "classification")

    @pytest.mark.parametrize("kind,task", [("imbalanced-blobs", "classification"),
                                           ("multilabel-synthetic", "multilabel"),
                                           ("noisy-regression", "regression")])
    def test_round_trip(self, tmp_path, kind, task):
        spec = DatasetSpec(kind=kind, n_samples=300, n_features=3, n_classes=3, n_targets=2,
                           imbalance_ratio=2.0, outlier_fraction=0.1, outlier_magnitude=3.0, seed=5)
        ds = generate(spec).train
        path = tmp_path / "rt.csv"
        save_csv(ds, path)
        back = load_csv(path, task, label_columns=ds.label_names, n_classes=ds.n_classes)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
        assert back.feature_names == ds.feature_names

    def test_csv_file_spec(self, tmp_path):
        path = tmp_path / "d.csv"
        save_csv(generate(DatasetSpec(n_samples=200)).full, path)
        splits = generate(DatasetSpec(kind="csv-file", path=str(path), task="classification"))
        assert sum(len(s) for s in splits) == 200
