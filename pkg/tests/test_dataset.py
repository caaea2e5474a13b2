"""
数据集模块测试
"""

import numpy as np
import pytest

from cumad.dataset import (
    FEATURE_DIM,
    FeatureMatrix,
    build_balanced_test,
    concat,
    generate_synthetic,
    load_device_stream,
    load_feature_csv,
    load_labeled_csv,
    partition_benign,
    write_device_stream,
    write_feature_csv,
)
from cumad.errors import DatasetError
from cumad.features import feature_names
from cumad.models.dataset import Label, SyntheticSpec


def _write_rows(path, rows, header=None):
    lines = []
    if header is not None:
        lines.append(",".join(header))
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _matrix(n, dim=4, device_id="dev"):
    return FeatureMatrix(np.arange(n * dim, dtype=float).reshape(n, dim), device_id)


class TestFeatureMatrix:
    """Test FeatureMatrix validation"""

    def test_non_finite_value_names_cell(self):
        values = np.ones((3, 4))
        values[1, 2] = np.nan
        with pytest.raises(DatasetError) as exc:
            FeatureMatrix(values, "dev")
        assert exc.value.row == 2
        assert exc.value.column == 3

    def test_labels_must_be_binary(self):
        with pytest.raises(DatasetError):
            FeatureMatrix(np.ones((2, 3)), "dev", labels=[0, 2])

    def test_class_rows(self):
        matrix = FeatureMatrix(np.arange(8.0).reshape(4, 2), "dev", labels=[0, 1, 0, 1])
        attack = matrix.class_rows(Label.ATTACK)
        assert len(attack) == 2
        np.testing.assert_array_equal(attack.values[:, 0], [2.0, 6.0])

    def test_concat_rejects_mixed_devices(self):
        with pytest.raises(DatasetError):
            concat([_matrix(2, device_id="a"), _matrix(2, device_id="b")])


class TestFeatureCsv:
    """Test feature CSV loading"""

    def test_header_and_three_rows(self, tmp_path):
        path = _write_rows(
            tmp_path / "benign.csv", np.random.default_rng(0).random((3, FEATURE_DIM)).tolist(), feature_names()
        )
        matrix = load_feature_csv(path, Label.BENIGN, "doorbell")
        assert len(matrix) == 3
        assert matrix.dim == FEATURE_DIM
        assert matrix.device_id == "doorbell"
        np.testing.assert_array_equal(matrix.labels, [0, 0, 0])

    def test_headerless_file(self, tmp_path):
        path = _write_rows(tmp_path / "attack.csv", [[1, 2, 3], [4, 5, 6]])
        matrix = load_feature_csv(path, Label.ATTACK, "dev", dim=3)
        np.testing.assert_array_equal(matrix.values, [[1, 2, 3], [4, 5, 6]])
        np.testing.assert_array_equal(matrix.labels, [1, 1])

    def test_short_row_names_line(self, tmp_path):
        path = _write_rows(tmp_path / "bad.csv", [[1, 2, 3], [4, 5]], ["a", "b", "c"])
        with pytest.raises(DatasetError) as exc:
            load_feature_csv(path, Label.BENIGN, "dev", dim=3)
        assert exc.value.row == 3
        assert "第 3 行" in str(exc.value)

    def test_wrong_width(self, tmp_path):
        rows = np.zeros((2, FEATURE_DIM - 1)).tolist()
        path = _write_rows(tmp_path / "narrow.csv", rows)
        with pytest.raises(DatasetError) as exc:
            load_feature_csv(path, Label.BENIGN, "dev")
        assert "114" in str(exc.value)

    def test_non_numeric_cell(self, tmp_path):
        path = _write_rows(tmp_path / "bad.csv", [[1, 2, 3], [4, "x", 6]], ["a", "b", "c"])
        with pytest.raises(DatasetError) as exc:
            load_feature_csv(path, Label.BENIGN, "dev", dim=3)
        assert exc.value.row == 3
        assert exc.value.column == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError):
            load_feature_csv(tmp_path / "absent.csv", Label.BENIGN, "dev")

    def test_label_column_ignored_for_class_files(self, tmp_path):
        matrix = FeatureMatrix(np.ones((2, 3)), "dev", labels=[1, 1])
        path = write_feature_csv(matrix, tmp_path / "with_label.csv", with_label=True)
        loaded = load_feature_csv(path, Label.BENIGN, "dev", dim=3)
        np.testing.assert_array_equal(loaded.labels, [0, 0])

    def test_labeled_round_trip(self, tmp_path):
        values = np.random.default_rng(1).standard_normal((5, 3))
        matrix = FeatureMatrix(values, "dev", labels=[0, 0, 1, 1, 0])
        path = write_feature_csv(matrix, tmp_path / "test.csv", with_label=True)
        loaded = load_labeled_csv(path, "dev", dim=3)
        np.testing.assert_allclose(loaded.values, values, rtol=1e-12)
        np.testing.assert_array_equal(loaded.labels, matrix.labels)

    def test_labeled_requires_label_column(self, tmp_path):
        path = write_feature_csv(_matrix(3, dim=3), tmp_path / "plain.csv")
        with pytest.raises(DatasetError):
            load_labeled_csv(path, "dev", dim=3)

    def test_device_stream(self, tmp_path):
        rows = [("cam", np.full(3, 1.0)), ("bell", np.full(3, 2.0)), ("cam", np.full(3, 3.0))]
        path = write_device_stream(rows, tmp_path / "stream.csv", dim=3)
        devices, values = load_device_stream(path, dim=3)
        assert devices == ["cam", "bell", "cam"]
        np.testing.assert_array_equal(values[:, 0], [1.0, 2.0, 3.0])


class TestPartition:
    """Test benign partitioning"""

    def test_equal_parts(self):
        split = partition_benign(_matrix(300), seed=7)
        assert split.sizes() == (100, 100, 100)

    def test_remainder_goes_to_earlier_parts(self):
        assert partition_benign(_matrix(301), seed=7).sizes() == (101, 100, 100)
        assert partition_benign(_matrix(302), seed=7).sizes() == (101, 101, 100)

    def test_parts_are_disjoint_and_complete(self):
        benign = _matrix(50)
        split = partition_benign(benign, seed=3)
        rows = np.vstack([split.train.values, split.validation.values, split.holdout_benign.values])
        first_column = sorted(rows[:, 0].tolist())
        assert first_column == sorted(benign.values[:, 0].tolist())

    def test_deterministic(self):
        a = partition_benign(_matrix(90), seed=11)
        b = partition_benign(_matrix(90), seed=11)
        np.testing.assert_array_equal(a.train.values, b.train.values)
        np.testing.assert_array_equal(a.holdout_benign.values, b.holdout_benign.values)

    def test_chronological_keeps_order(self):
        split = partition_benign(_matrix(9), seed=0, chronological=True)
        np.testing.assert_array_equal(split.train.values, _matrix(9).values[:3])

    def test_calibration_set_is_train_plus_validation(self):
        split = partition_benign(_matrix(30), seed=2)
        calibration = split.calibration_set
        assert len(calibration) == 20
        np.testing.assert_array_equal(calibration.values[:10], split.train.values)

    def test_too_small(self):
        with pytest.raises(DatasetError):
            partition_benign(_matrix(2), seed=0)


class TestBalancedTest:
    """Test balanced test set construction"""

    def test_sampled_attack(self):
        test = build_balanced_test(_matrix(100), _matrix(500), seed=4)
        assert len(test) == 200
        assert int(np.sum(test.labels == 0)) == 100
        assert int(np.sum(test.labels == 1)) == 100

    def test_exact_size_uses_all_rows(self):
        attack = _matrix(100)
        test = build_balanced_test(_matrix(100), attack, seed=4)
        np.testing.assert_array_equal(test.class_rows(Label.ATTACK).values, attack.values)

    def test_insufficient_attack(self):
        with pytest.raises(DatasetError) as exc:
            build_balanced_test(_matrix(100), _matrix(99), seed=4)
        assert "99 < 100" in str(exc.value)


class TestSynthetic:
    """Test the synthetic generator"""

    def test_shapes(self):
        spec = SyntheticSpec(n_benign=1000, n_attack=1000, dim=115, benign_correlation=0.5, attack_shift=4.0, seed=1)
        benign, attack = generate_synthetic(spec)
        assert benign.values.shape == (1000, 115)
        assert attack.values.shape == (1000, 115)
        assert set(benign.labels.tolist()) == {0}
        assert set(attack.labels.tolist()) == {1}

    def test_shift_per_feature(self):
        spec = SyntheticSpec(n_benign=1000, n_attack=1000, dim=20, benign_correlation=0.5, attack_shift=6.0, seed=1)
        benign, attack = generate_synthetic(spec)
        diff = attack.values.mean(axis=0) - benign.values.mean(axis=0)
        assert np.all((diff >= 5.5) & (diff <= 6.5))

    def test_correlation(self):
        spec = SyntheticSpec(n_benign=5000, n_attack=10, dim=8, benign_correlation=0.8, seed=2)
        benign, _ = generate_synthetic(spec)
        corr = np.corrcoef(benign.values, rowvar=False)
        off_diagonal = corr[~np.eye(8, dtype=bool)]
        assert abs(off_diagonal.mean() - 0.8) < 0.03

    def test_attack_rows_leave_benign_factor(self):
        spec = SyntheticSpec(n_benign=10, n_attack=5000, dim=8, benign_correlation=0.8, attack_shift=4.0, seed=3)
        _, attack = generate_synthetic(spec)
        corr = np.corrcoef(attack.values, rowvar=False)
        assert np.abs(corr[~np.eye(8, dtype=bool)]).max() < 0.06
        np.testing.assert_allclose(attack.values.std(axis=0), 1.0, atol=0.05)
        np.testing.assert_allclose(attack.values.mean(axis=0), 4.0, atol=0.06)

    def test_seeded(self):
        spec = SyntheticSpec(n_benign=10, n_attack=10, dim=4, seed=9)
        a, _ = generate_synthetic(spec)
        b, _ = generate_synthetic(spec)
        np.testing.assert_array_equal(a.values, b.values)

    def test_invalid_synthetic_settings(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n_benign=0, n_attack=10)
        with pytest.raises(ValueError):
            SyntheticSpec(n_benign=10, n_attack=10, benign_correlation=1.0)
