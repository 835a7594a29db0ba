"""
Tests for the experiment harness.

Grid enumeration, scoring, the per-dataset pipeline, whole experiments
on a tiny grid, aggregation and report export.
"""

import json

import numpy as np
import pandas as pd
import pytest

import fifuse._harness as harness
from fifuse._config import ExplainerConfig
from fifuse._fusion import FusionStrategy, SourceLabel, matrix_from_rows
from fifuse._harness import (
    ExperimentConfig,
    ExperimentReport,
    GridCell,
    RunRecord,
    aggregate,
    aggregate_table,
    cell_seed,
    enumerate_grid,
    explainer_config_for,
    export_report,
    load_records_csv,
    load_report,
    run_experiment,
    run_single,
    score,
    sme_vector,
    summarize_methods,
)
from fifuse._models import ModelKind
from fifuse._synthdata import DataConfig, generate_dataset, ground_truth_importance
from fifuse._utils import ExperimentError, ReportIOError


def tiny_config(**overrides):
    values = dict(
        noise_levels=[0.0],
        informative_pcts=[50.0, 100.0],
        n_features_list=[4],
        runs_per_dataset=2,
        n_samples=60,
        model_kinds=["rf", "dnn"],
        scale_profile="desk",
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture(scope="module")
def tiny_report():
    """Fixture running the tiny grid once for the whole module."""
    return run_experiment(tiny_config())


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(DataConfig(n_samples=60, n_features=4, informative_pct=50, seed=3))


class TestGrid:
    """Test grid enumeration and seeding."""

    def test_default_grid(self):
        cells = enumerate_grid(ExperimentConfig())
        assert len(cells) == 45
        assert cells[0] == GridCell(0.0, 20.0, 20)
        assert cells[1] == GridCell(0.0, 20.0, 60)
        assert cells[-1] == GridCell(4.0, 100.0, 100)

    def test_default_config_is_valid(self):
        ExperimentConfig().validate()

    def test_run_seeds_differ(self):
        cell = GridCell(0.0, 20.0, 20)
        seeds = {cell_seed(0, cell, run) for run in range(10)}
        assert len(seeds) == 10
        assert cell_seed(0, cell, 3) == cell_seed(0, cell, 3)
        assert cell_seed(1, cell, 3) != cell_seed(0, cell, 3)

    def test_profile_sizes(self):
        assert ExperimentConfig(scale_profile="full").effective_n_samples == 2000
        assert ExperimentConfig().effective_n_samples == 500
        assert ExperimentConfig(n_samples=80).effective_n_samples == 80

    def test_paper_profile_alias(self):
        cfg = ExperimentConfig(scale_profile="paper")
        assert cfg.scale_profile == "full"
        assert cfg.effective_n_samples == 2000
        assert explainer_config_for("paper") == ExplainerConfig()

    def test_desk_explainer_settings(self):
        desk = explainer_config_for("desk")
        assert desk.explain_rows == 25
        assert desk.background_k == 10
        assert explainer_config_for("full") == ExplainerConfig()


class TestExperimentConfig:
    """Test experiment config validation and loading."""

    @pytest.mark.parametrize("overrides", [
        {"noise_levels": []},
        {"runs_per_dataset": 0},
        {"scale_profile": "huge"},
        {"jobs": 0},
        {"model_kinds": ["rf", "rf"]},
        {"model_kinds": ["knn"]},
        {"strategies": ["geometric"]},
        {"n_features_list": [2]},
        {"informative_pcts": [1.0], "n_features_list": [20]},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ExperimentError):
            tiny_config(**overrides).validate()

    def test_small_features_without_rate(self):
        tiny_config(n_features_list=[2], strategies=["mean", "median"]).validate()

    def test_from_file(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({"noise_levels": [1.0], "runs_per_dataset": 3}))
        cfg = ExperimentConfig.from_file(path)
        assert cfg.noise_levels == [1.0]
        assert cfg.runs_per_dataset == 3
        assert cfg.n_features_list == [20, 60, 100]

    def test_unknown_key(self):
        with pytest.raises(ExperimentError, match="Unknown"):
            ExperimentConfig.from_dict({"noise": [0.0]})


class TestScore:
    """Test scoring against the ground truth."""

    def test_perfect(self):
        truth = np.array([0.5, 0.3, 0.2, 0.0])
        s = score(truth, truth)
        assert s.mae == 0.0
        assert s.rmse == 0.0
        assert s.r2 == 1.0

    def test_uniform_guess(self):
        s = score(np.full(4, 0.25), np.array([0.5, 0.5, 0.0, 0.0]))
        assert s.mae == pytest.approx(0.25)
        assert s.rmse == pytest.approx(0.25)
        assert s.r2 == pytest.approx(0.0)

    def test_constant_truth_has_no_r2(self):
        s = score(np.array([0.4, 0.3, 0.2, 0.1]), np.full(4, 0.25))
        assert s.r2 is None
        assert s.mae > 0

    def test_shape_mismatch(self):
        with pytest.raises(ExperimentError):
            score(np.ones(3) / 3, np.ones(4) / 4)

    def test_against_ground_truth_object(self, small_dataset):
        truth = ground_truth_importance(small_dataset)
        assert score(truth.values, truth).mae == 0.0


class TestSmeVector:
    """Test single-method ensembles."""

    def test_mean_of_method_rows(self):
        labels = [
            SourceLabel("rf", "pi", "train"),
            SourceLabel("rf", "shap", "train"),
            SourceLabel("svr", "pi", "train"),
        ]
        V = matrix_from_rows(np.array([[0.2, 0.8], [0.9, 0.1], [0.4, 0.6]]), labels)
        np.testing.assert_allclose(sme_vector(V, "pi"), [0.3, 0.7])
        np.testing.assert_allclose(sme_vector(V, "shap"), [0.9, 0.1])

    def test_missing_method(self):
        V = matrix_from_rows(np.array([[0.2, 0.8]]), [SourceLabel("rf", "pi", "train")])
        with pytest.raises(ExperimentError):
            sme_vector(V, "ig")


class TestRunSingle:
    """Test the per-dataset pipeline."""

    def test_all_models(self, small_dataset):
        train_matrix, test_matrix = run_single(small_dataset, list(ModelKind), seed=0)
        assert train_matrix.n_sources == 9
        assert test_matrix.n_sources == 9
        assert train_matrix.n_features == 4
        assert {label.split for label in test_matrix.labels} == {"test"}
        assert len(train_matrix.rows_for_method("ig")) == 1
        np.testing.assert_allclose(train_matrix.values.sum(axis=1), 1.0)

    def test_without_network(self, small_dataset):
        train_matrix, _ = run_single(small_dataset, ["rf", "gbt", "svr"], seed=0)
        assert train_matrix.n_sources == 6
        assert train_matrix.rows_for_method("ig") == []

    def test_deterministic(self, small_dataset):
        a, _ = run_single(small_dataset, ["rf", "svr"], seed=5)
        b, _ = run_single(small_dataset, ["rf", "svr"], seed=5)
        np.testing.assert_array_equal(a.values, b.values)


class TestRunExperiment:
    """Test whole experiments on a tiny grid."""

    def test_record_counts(self, tiny_report):
        # 2 datasets x 2 runs x 2 splits x (3 single methods + 8 strategies)
        assert len(tiny_report.records) == 2 * 2 * 2 * 11
        assert len(tiny_report.fits) == 2 * 2 * 2
        assert tiny_report.failures == []
        per_run = [r for r in tiny_report.records if r.run == 0 and r.split == "test" and r.informative_pct == 50.0]
        assert len(per_run) == 11
        assert set(tiny_report.methods) == {"pi", "shap", "ig"} | {s.value for s in FusionStrategy}

    def test_scores_are_valid(self, tiny_report):
        for record in tiny_report.records:
            assert 0.0 <= record.mae <= 1.0
            assert record.rmse >= record.mae - 1e-12

    def test_aggregates(self, tiny_report):
        rows = [a for a in tiny_report.aggregates
                if a.factor == "informative" and a.level == 50.0 and a.split == "test"
                and a.method == "mean" and a.metric == "mae"]
        assert len(rows) == 1
        assert rows[0].count == 2
        assert rows[0].profile == "desk"
        maes = [r.mae for r in tiny_report.records
                if r.informative_pct == 50.0 and r.split == "test" and r.method == "mean"]
        assert rows[0].mean == pytest.approx(np.mean(maes))
        assert rows[0].std == pytest.approx(np.std(maes))

    def test_aggregate_table(self, tiny_report):
        table = aggregate_table(tiny_report.records, "informative", "mae", "test")
        assert table.shape == (11, 2)
        assert list(table.columns) == ["50", "100"]
        assert "±" in table.loc["mean", "50"]

    def test_summary(self, tiny_report):
        summary = summarize_methods(tiny_report)
        assert summary.best_sme in ("pi", "shap", "ig")
        assert summary.best_mme in {s.value for s in FusionStrategy}
        assert summary.relative_improvement is not None

    def test_progress_updates(self):
        class Recorder:
            def __init__(self):
                self.calls = []

            def update(self, current, total, message=""):
                self.calls.append((current, total))

        recorder = Recorder()
        run_experiment(tiny_config(model_kinds=["svr"], informative_pcts=[100.0], runs_per_dataset=2),
                       progress=recorder)
        assert recorder.calls == [(1, 2), (2, 2)]

    def test_failed_run_is_recorded(self, monkeypatch):
        original = harness.run_pipeline

        def flaky(d, kinds, seed, profile, explainer_config):
            if d.config.seed == cell_seed(0, GridCell(0.0, 100.0, 4), 0):
                raise ExperimentError("boom")
            return original(d, kinds, seed, profile, explainer_config)

        monkeypatch.setattr(harness, "run_pipeline", flaky)
        report = run_experiment(tiny_config(model_kinds=["svr"], informative_pcts=[100.0]))
        assert len(report.failures) == 1
        assert report.failures[0].run == 0
        assert {r.run for r in report.records} == {1}

    def test_every_run_failed(self, monkeypatch):
        def broken(*args, **kwargs):
            raise ExperimentError("boom")

        monkeypatch.setattr(harness, "run_pipeline", broken)
        with pytest.raises(ExperimentError, match="Every run failed"):
            run_experiment(tiny_config(model_kinds=["svr"]))


class TestAggregate:
    """Test aggregation of hand-made records."""

    def test_population_std_and_missing_r2(self):
        records = [
            RunRecord(0.0, 100.0, 4, run, "test", "mean", mae, mae, None)
            for run, mae in enumerate([0.1, 0.3])
        ]
        rows = {(a.factor, a.metric): a for a in aggregate(records)}
        assert rows[("noise", "mae")].mean == pytest.approx(0.2)
        assert rows[("noise", "mae")].std == pytest.approx(0.1)
        assert rows[("noise", "r2")].mean is None
        assert rows[("nfeat", "mae")].level == 4.0

    def test_empty(self):
        assert aggregate([]) == []


class TestExport:
    """Test report export and re-import."""

    def test_csv(self, tiny_report, tmp_path):
        written = export_report(tiny_report, tmp_path)
        assert len(written) == 3 + 3 * 3 * 2
        assert (tmp_path / "noise_mae_test.csv").exists()
        frame = load_records_csv(tmp_path / "records.csv")
        assert len(frame) == len(tiny_report.records)
        assert aggregate_table(frame, "informative", "mae", "test").shape == (11, 2)

    def test_json_round_trip(self, tiny_report, tmp_path):
        export_report(tiny_report, tmp_path, format="json")
        loaded = load_report(tmp_path)
        assert loaded.records == tiny_report.records
        assert loaded.aggregates == tiny_report.aggregates
        assert loaded.profile == "desk"

    def test_empty_report(self, tmp_path):
        written = export_report(ExperimentReport(), tmp_path)
        assert len(written) == 3
        assert pd.read_csv(tmp_path / "records.csv").empty
        assert (tmp_path / "records.csv").read_text().startswith("noise,informative_pct,n_features,run")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ReportIOError):
            export_report(ExperimentReport(), tmp_path, format="xlsx")

    def test_load_not_a_report(self, tmp_path):
        (tmp_path / "report.json").write_text("{}")
        with pytest.raises(ReportIOError):
            load_report(tmp_path)

    def test_records_missing_columns(self, tmp_path):
        path = tmp_path / "records.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ReportIOError):
            load_records_csv(path)
