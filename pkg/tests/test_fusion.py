"""
Tests for importance matrices and the fusion strategies.
"""

import numpy as np
import pytest

from fifuse._explainers import AttributionMethod, ImportanceVector
from fifuse._fusion import (
    FusionStrategy,
    SourceLabel,
    build_importance_matrix,
    fuse,
    fuse_box_whiskers,
    fuse_majority_vote,
    fuse_mode,
    fuse_rate,
    fuse_tau_test,
    matrix_from_rows,
    rate_truth_table,
    read_matrix_csv,
    write_vectors_csv,
)
from fifuse._models import ModelKind
from fifuse._utils import FusionError, ReportIOError

ALL_STRATEGIES = list(FusionStrategy)


def vector(values, model=ModelKind.RANDOM_FOREST, method=AttributionMethod.PI, split="train"):
    return ImportanceVector(np.asarray(values, dtype=float), model, method, split)


def random_matrix(seed, n_sources=5, n_features=6):
    rng = np.random.default_rng(seed)
    return matrix_from_rows(rng.random((n_sources, n_features)))


class TestImportanceMatrix:
    """Test normalization into the simplex."""

    def test_absolute_values_normalized(self):
        V = matrix_from_rows(np.array([[2.0, 2.0], [-1.0, 3.0]]))
        np.testing.assert_allclose(V.values, [[0.5, 0.5], [0.25, 0.75]])
        assert V.degenerate_rows == ()

    def test_all_zero_row_becomes_uniform(self):
        V = matrix_from_rows(np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0]]))
        np.testing.assert_allclose(V.values[0], 0.25)
        assert V.degenerate_rows == (0,)

    def test_from_vectors_keeps_labels(self):
        V = build_importance_matrix([
            vector([1.0, 3.0, 0.0]),
            vector([2.0, 2.0, 4.0], ModelKind.DEEP_NEURAL_NETWORK, AttributionMethod.IG, "test"),
        ])
        assert V.n_sources == 2
        assert V.n_features == 3
        assert str(V.labels[1]) == "dnn/ig/test"
        assert V.rows_for_method("ig") == [1]

    def test_rejects_ragged_vectors(self):
        with pytest.raises(FusionError):
            build_importance_matrix([vector([1.0, 2.0]), vector([1.0, 2.0, 3.0])])

    def test_rejects_empty(self):
        with pytest.raises(FusionError):
            build_importance_matrix([])

    def test_rejects_non_finite(self):
        with pytest.raises(FusionError):
            matrix_from_rows(np.array([[1.0, np.nan]]))

    def test_read_only(self):
        V = random_matrix(0)
        with pytest.raises(ValueError):
            V.values[0, 0] = 1.0


class TestFusionExamples:
    """Worked examples for the individual strategies."""

    def test_mean_and_median(self):
        V = matrix_from_rows(np.array([[0.2, 0.8], [0.4, 0.6], [0.9, 0.1]]))
        np.testing.assert_allclose(fuse(V, "mean").final, [0.5, 0.5])
        np.testing.assert_allclose(fuse(V, "median").raw, [0.4, 0.6])

    def test_majority_vote(self):
        V = matrix_from_rows(np.array([
            [0.30, 0.25, 0.25, 0.20],
            [0.32, 0.28, 0.22, 0.18],
            [0.28, 0.26, 0.24, 0.22],
            [0.10, 0.75, 0.08, 0.07],
        ]))
        result = fuse_majority_vote(V)
        assert result.raw[0] == pytest.approx(0.30)
        assert not result.kept_mask[3, 0]

    def test_tau_test_rejects_outlier(self):
        V = matrix_from_rows(np.array([
            [0.10, 0.90],
            [0.11, 0.89],
            [0.09, 0.91],
            [0.50, 0.50],
        ]))
        result = fuse_tau_test(V)
        np.testing.assert_allclose(result.raw, [0.10, 0.90])
        assert result.retained_sources == (0, 1, 2)

    def test_tau_test_keeps_constant_column(self):
        V = matrix_from_rows(np.array([[0.5, 0.5]] * 4))
        assert fuse_tau_test(V).kept_mask.all()

    def test_box_whiskers(self):
        V = matrix_from_rows(np.array([[0.1, 0.9]] * 3 + [[0.9, 0.1]]))
        result = fuse_box_whiskers(V)
        np.testing.assert_allclose(result.raw, [0.1, 0.9])
        assert result.retained_sources == (0, 1, 2)

    def test_mode(self):
        V = matrix_from_rows(np.array([[0.10, 0.90], [0.11, 0.89], [0.52, 0.48]]))
        result = fuse_mode(V, bin_width=0.05)
        assert result.raw[0] == pytest.approx(0.105)

    def test_mode_bins_edge_values_upward(self):
        V = matrix_from_rows(np.array([[0.15, 0.85], [0.16, 0.84], [0.12, 0.88]]))
        result = fuse_mode(V, bin_width=0.05)
        assert result.kept_mask[:, 0].tolist() == [True, True, False]
        assert result.raw[0] == pytest.approx(0.155)

    def test_mode_tie_with_edge_value(self):
        # 0.15 opens its own bin, so the tie resolves to the median's bin
        V = matrix_from_rows(np.array([[0.15, 0.85], [0.10, 0.90]]))
        result = fuse_mode(V, bin_width=0.05)
        assert result.kept_mask[:, 0].tolist() == [False, True]
        assert result.raw[0] == pytest.approx(0.10)

    def test_mode_needs_positive_bin_width(self):
        with pytest.raises(FusionError):
            fuse_mode(random_matrix(1), bin_width=0.0)

    def test_unknown_strategy(self):
        with pytest.raises(FusionError, match="Unknown"):
            fuse(random_matrix(2), "geometric")

    def test_to_dict(self):
        payload = fuse(random_matrix(3), FusionStrategy.RATE_SPEARMAN).to_dict()
        assert payload["strategy"] == "rate-spearman"
        assert len(payload["final"]) == 6
        assert "truth_table" in payload


class TestRate:
    """Test rank correlation with majority vote."""

    @pytest.mark.parametrize("correlation", ["kendall", "spearman"])
    def test_discards_reversed_source(self, correlation):
        base = np.arange(10, 0, -1, dtype=float)
        V = matrix_from_rows(np.stack([base, base, base, base[::-1]]))
        result = fuse_rate(V, correlation)
        assert result.retained_sources == (0, 1, 2)
        assert not result.fallback
        np.testing.assert_allclose(result.final, V.values[0])

    @pytest.mark.parametrize("correlation", ["kendall", "spearman"])
    def test_four_features_agree(self, correlation):
        row = np.array([0.4, 0.3, 0.2, 0.1])
        V = matrix_from_rows(np.stack([row, row, row]))
        truth = rate_truth_table(V, correlation)
        assert truth.sum() == 6
        assert not truth.diagonal().any()

    def test_two_disagreeing_sources_fall_back(self):
        row = np.array([0.4, 0.3, 0.2, 0.1])
        V = matrix_from_rows(np.stack([row, row[::-1]]))
        result = fuse_rate(V, "kendall")
        assert result.fallback
        np.testing.assert_allclose(result.final, V.values.mean(axis=0))

    def test_unrelated_sources_fall_back(self):
        V = matrix_from_rows(np.random.default_rng(11).random((6, 10)))
        result = fuse(V, FusionStrategy.RATE_KENDALL)
        assert result.fallback
        assert result.retained_sources == tuple(range(6))

    def test_needs_three_features(self):
        V = matrix_from_rows(np.array([[0.5, 0.5], [0.4, 0.6], [0.3, 0.7]]))
        with pytest.raises(FusionError):
            fuse(V, FusionStrategy.RATE_SPEARMAN)

    def test_truth_table_symmetric(self):
        truth = rate_truth_table(random_matrix(4, n_sources=7, n_features=8), "spearman")
        np.testing.assert_array_equal(truth, truth.T)


@pytest.mark.parametrize("strategy", ALL_STRATEGIES, ids=lambda s: s.value)
class TestStrategyProperties:
    """Properties every strategy satisfies."""

    def test_output_on_simplex(self, strategy):
        for seed in range(10):
            final = fuse(random_matrix(seed), strategy).final
            assert np.all(final >= 0)
            assert final.sum() == pytest.approx(1.0)

    def test_raw_within_column_range(self, strategy):
        for seed in range(10):
            V = random_matrix(seed)
            raw = fuse(V, strategy).raw
            assert np.all(raw >= V.values.min(axis=0) - 1e-12)
            assert np.all(raw <= V.values.max(axis=0) + 1e-12)

    def test_feature_permutation_equivariance(self, strategy):
        V = random_matrix(20, n_sources=6, n_features=7)
        order = np.array([4, 2, 6, 0, 1, 5, 3])
        permuted = matrix_from_rows(V.values[:, order])
        np.testing.assert_allclose(fuse(permuted, strategy).final, fuse(V, strategy).final[order], atol=1e-12)

    def test_consensus_is_returned(self, strategy):
        row = np.random.default_rng(21).random(6)
        V = matrix_from_rows(np.stack([row] * 5))
        np.testing.assert_allclose(fuse(V, strategy).final, V.values[0], atol=1e-12)

    def test_single_source_is_returned(self, strategy):
        V = random_matrix(22, n_sources=1)
        result = fuse(V, strategy)
        np.testing.assert_allclose(result.final, V.values[0], atol=1e-12)
        assert result.retained_sources == (0,)

    def test_row_scale_invariance(self, strategy):
        rng = np.random.default_rng(23)
        rows = rng.random((5, 6))
        scaled = rows * np.array([1.0, 10.0, 0.5, 3.0, 100.0])[:, None]
        np.testing.assert_allclose(
            fuse(matrix_from_rows(scaled), strategy).final,
            fuse(matrix_from_rows(rows), strategy).final,
            atol=1e-12,
        )


class TestFusionStatistics:
    """Aggregate behavior over many random matrices."""

    def test_mean_never_worse_than_worst_source(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            truth = rng.dirichlet(np.ones(5))
            V = matrix_from_rows(rng.random((4, 5)))
            fused_error = np.mean(np.abs(fuse(V, "mean").final - truth))
            worst = max(np.mean(np.abs(row - truth)) for row in V.values)
            assert fused_error <= worst + 1e-12

    def test_mean_variance_shrinks_with_sources(self):
        truth = np.array([0.4, 0.3, 0.15, 0.1, 0.05])
        spread = {}
        for n_sources in (2, 8):
            rng = np.random.default_rng(n_sources)
            fused = np.stack([
                fuse(matrix_from_rows(truth + rng.normal(0.0, 0.02, (n_sources, 5))), "mean").final
                for _ in range(200)
            ])
            spread[n_sources] = fused.var(axis=0).sum()
        assert spread[8] < spread[2]

    @pytest.mark.parametrize("strategy", ["mean", "median"])
    def test_fusion_reduces_error(self, strategy):
        rng = np.random.default_rng(1)
        truth = np.array([0.4, 0.3, 0.15, 0.1, 0.05])
        fused, single = [], []
        for _ in range(200):
            V = matrix_from_rows(truth + rng.normal(0.0, 0.05, (6, 5)))
            fused.append(np.mean((fuse(V, strategy).final - truth) ** 2))
            single.append(np.mean((V.values - truth) ** 2))
        assert np.mean(fused) < np.mean(single)


class TestImportanceCsv:
    """Test the importance CSV format."""

    def test_round_trip(self, tmp_path):
        path = tmp_path / "importance.csv"
        vectors = [
            vector([0.1, 0.2, 0.7]),
            vector([3.0, 1.0, 0.0], ModelKind.LINEAR_SVR, AttributionMethod.SHAP, "test"),
        ]
        write_vectors_csv(vectors, path)
        assert path.read_text().splitlines()[0] == "model,method,split,f0,f1,f2"

        V = read_matrix_csv(path)
        assert V.labels[1] == SourceLabel("svr", "shap", "test")
        np.testing.assert_allclose(V.values[1], [0.75, 0.25, 0.0])

    def test_append(self, tmp_path):
        path = tmp_path / "importance.csv"
        write_vectors_csv([vector([1.0, 2.0, 3.0])], path)
        write_vectors_csv([vector([3.0, 2.0, 1.0])], path, append=True)
        assert read_matrix_csv(path).n_sources == 2

    def test_append_width_mismatch(self, tmp_path):
        path = tmp_path / "importance.csv"
        write_vectors_csv([vector([1.0, 2.0, 3.0])], path)
        with pytest.raises(FusionError):
            write_vectors_csv([vector([1.0, 2.0])], path, append=True)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportIOError):
            read_matrix_csv(tmp_path / "absent.csv")

    def test_unlabelled_matrix(self, tmp_path):
        path = tmp_path / "plain.csv"
        path.write_text("f0,f1,f2\n1,1,2\n")
        V = read_matrix_csv(path)
        np.testing.assert_allclose(V.values[0], [0.25, 0.25, 0.5])
        assert V.labels[0].model == "unknown"
