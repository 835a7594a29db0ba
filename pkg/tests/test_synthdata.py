"""
Tests for synthetic dataset generation.

Covers the informative-feature count, scaling, ground truth, splitting and
the CSV + sidecar export.
"""

import numpy as np
import pytest

from fifuse._synthdata import (
    COEFFICIENT_RANGE,
    DataConfig,
    generate_dataset,
    ground_truth_importance,
    informative_count,
    load_dataset,
    save_dataset,
    split,
)
from fifuse._utils import DataConfigError, ReportIOError


@pytest.fixture
def dataset():
    """Fixture providing a small noisy dataset."""
    return generate_dataset(DataConfig(n_samples=200, n_features=20, informative_pct=40, noise_std=2.0, seed=7))


class TestGenerateDataset:
    """Test cases for dataset generation."""

    def test_shapes(self, dataset):
        assert dataset.X.shape == (200, 20)
        assert dataset.y.shape == (200,)
        assert dataset.true_coefficients.shape == (20,)

    def test_exact_informative_count(self, dataset):
        nonzero = np.flatnonzero(dataset.true_coefficients)
        assert nonzero.size == 8
        low, high = COEFFICIENT_RANGE
        assert np.all(dataset.true_coefficients[nonzero] >= low)
        assert np.all(dataset.true_coefficients[nonzero] <= high)

    def test_features_scaled_to_unit_interval(self, dataset):
        np.testing.assert_allclose(dataset.X.min(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(dataset.X.max(axis=0), 1.0, atol=1e-12)

    def test_noiseless_target_is_linear_in_raw_features(self):
        d = generate_dataset(DataConfig(n_samples=50, n_features=6, informative_pct=50, seed=1))
        np.testing.assert_allclose(d.y, d.X_raw @ d.true_coefficients, rtol=1e-12, atol=1e-9)

    def test_noiseless_coefficients_recoverable_by_least_squares(self):
        d = generate_dataset(DataConfig(n_samples=200, n_features=20, informative_pct=60, seed=4))
        fitted, *_ = np.linalg.lstsq(d.X_raw, d.y, rcond=None)
        error = np.linalg.norm(fitted - d.true_coefficients) / np.linalg.norm(d.true_coefficients)
        assert error < 1e-6

    @pytest.mark.parametrize("n_features", [20, 60, 100])
    @pytest.mark.parametrize("informative_pct", [20, 40, 60, 80, 100])
    def test_informative_count_on_grid(self, n_features, informative_pct):
        d = generate_dataset(DataConfig(n_samples=30, n_features=n_features,
                                        informative_pct=informative_pct, seed=n_features + informative_pct))
        assert np.count_nonzero(d.true_coefficients) == n_features * informative_pct // 100

    def test_noise_level(self):
        d = generate_dataset(DataConfig(n_samples=4000, n_features=5, noise_std=2.0, seed=3))
        residual = d.y - d.X_raw @ d.true_coefficients
        assert residual.std() == pytest.approx(2.0, rel=0.1)

    def test_same_seed_same_data(self):
        config = DataConfig(n_samples=100, n_features=10, informative_pct=60, noise_std=1.0, seed=11)
        a, b = generate_dataset(config), generate_dataset(config)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.true_coefficients, b.true_coefficients)

    def test_different_seeds_differ(self):
        a = generate_dataset(DataConfig(n_samples=50, n_features=5, seed=1))
        b = generate_dataset(DataConfig(n_samples=50, n_features=5, seed=2))
        assert not np.array_equal(a.X, b.X)

    def test_arrays_are_read_only(self, dataset):
        with pytest.raises(ValueError):
            dataset.X[0, 0] = 1.0


class TestDataConfig:
    """Test configuration validation."""

    def test_informative_count_rounds_half_up(self):
        assert informative_count(20, 2.5) == 1
        assert informative_count(20, 40) == 8
        assert informative_count(60, 20) == 12

    @pytest.mark.parametrize("kwargs", [
        {"n_features": 0},
        {"n_features": 20, "informative_pct": 1},
        {"informative_pct": 0},
        {"train_fraction": 0.0},
        {"train_fraction": 1.0},
        {"noise_std": -1.0},
        {"n_samples": 1},
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(DataConfigError):
            generate_dataset(DataConfig(**kwargs))


class TestGroundTruth:
    """Test ground-truth importance."""

    def test_simplex_and_support(self, dataset):
        truth = ground_truth_importance(dataset)
        assert truth.values.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(truth.values >= 0)
        np.testing.assert_array_equal(truth.values == 0, dataset.true_coefficients == 0)

    def test_proportional_to_coefficients(self, dataset):
        truth = ground_truth_importance(dataset)
        c = np.abs(dataset.true_coefficients)
        np.testing.assert_allclose(truth.values, c / c.sum())


class TestSplit:
    """Test the train/test split."""

    def test_sizes(self, dataset):
        train, test = split(dataset)
        assert train.X.shape[0] == 160
        assert test.X.shape[0] == 40
        assert train.name == "train"
        assert test.name == "test"

    def test_train_size_rounds_down(self):
        d = generate_dataset(DataConfig(n_samples=101, n_features=4, train_fraction=0.5, seed=2))
        train, test = split(d)
        assert train.X.shape[0] == 50
        assert test.X.shape[0] == 51

    def test_partition(self, dataset):
        train, test = split(dataset)
        np.testing.assert_array_equal(np.vstack([train.X, test.X]), dataset.X)
        np.testing.assert_array_equal(np.concatenate([train.y, test.y]), dataset.y)


class TestDatasetFiles:
    """Test CSV export and import."""

    def test_round_trip(self, dataset, tmp_path):
        csv_path, sidecar = save_dataset(dataset, tmp_path / "d.csv")
        assert csv_path.exists()
        assert sidecar == tmp_path / "d.json"

        loaded = load_dataset(csv_path)
        np.testing.assert_array_equal(loaded.X, dataset.X)
        np.testing.assert_array_equal(loaded.y, dataset.y)
        np.testing.assert_array_equal(loaded.true_coefficients, dataset.true_coefficients)
        assert loaded.split_index == dataset.split_index
        assert loaded.config == dataset.config
        assert loaded.X_raw is None

    def test_header(self, dataset, tmp_path):
        csv_path, _ = save_dataset(dataset, tmp_path / "d.csv")
        header = csv_path.read_text().splitlines()[0]
        assert header == ",".join([f"f{i}" for i in range(20)] + ["y"])

    def test_missing_sidecar(self, dataset, tmp_path):
        csv_path, sidecar = save_dataset(dataset, tmp_path / "d.csv")
        sidecar.unlink()
        with pytest.raises(ReportIOError):
            load_dataset(csv_path)
