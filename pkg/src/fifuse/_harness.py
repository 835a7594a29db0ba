"""
Experiment harness for fifuse.

Runs the full pipeline (generate, train, explain, fuse) over a grid of
dataset factors with repeated seeds, scores every single-method ensemble
and every fusion strategy against the ground truth on both splits, and
aggregates the scores per factor level.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, asdict, field, fields, replace
from pathlib import Path
import logging
import math

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from sklearn.metrics import mean_absolute_error, mean_squared_error

from ._config import ExplainerConfig, FusionConfig
from ._explainers import AttributionMethod, build_background, vectors_for_model
from ._fusion import FusionStrategy, ImportanceMatrix, build_importance_matrix, fuse
from ._models import SCALE_PROFILES, ModelKind, default_hyperparams, resolve_profile, score_fit, train
from ._progress import ProgressReporter
from ._resources import ResourceTracker, release_memory
from ._synthdata import DataConfig, Dataset, GroundTruthImportance, generate_dataset, ground_truth_importance, split
from ._utils import (
    DataConfigError,
    ExperimentError,
    FifuseError,
    PathLike,
    ReportIOError,
    derive_seed,
    l1_normalize,
    read_json,
    write_json,
)

logger = logging.getLogger(__name__)

FACTORS = {
    "noise": "noise",
    "informative": "informative_pct",
    "nfeat": "n_features",
}
SME_METHODS = tuple(m.value for m in AttributionMethod)
RECORD_COLUMNS = ["noise", "informative_pct", "n_features", "run", "split", "method", "mae", "rmse", "r2"]
FIT_COLUMNS = ["noise", "informative_pct", "n_features", "run", "model", "train_r2", "test_r2"]
AGGREGATE_COLUMNS = ["factor", "level", "split", "method", "metric", "mean", "std", "count", "profile"]
METRICS = ("mae", "rmse", "r2")
SPLITS = ("train", "test")

PROFILE_SAMPLES = {"full": 2000, "desk": 500}

# Row-level failures a run may hit without invalidating the whole grid
RUN_ERRORS = (FifuseError, ValueError, RuntimeError, FloatingPointError)


@dataclass
class ExperimentConfig:
    """
    Factor grid and scale of an experiment.

    Every field may be given in a JSON config file; unknown keys are
    rejected. ``n_samples`` defaults to the profile's dataset size.
    """
    noise_levels: List[float] = field(default_factory=lambda: [0.0, 2.0, 4.0])
    informative_pcts: List[float] = field(default_factory=lambda: [20.0, 40.0, 60.0, 80.0, 100.0])
    n_features_list: List[int] = field(default_factory=lambda: [20, 60, 100])
    runs_per_dataset: int = 10
    n_samples: Optional[int] = None
    model_kinds: List[str] = field(default_factory=lambda: [k.value for k in ModelKind])
    strategies: List[str] = field(default_factory=lambda: [s.value for s in FusionStrategy])
    seed_base: int = 0
    scale_profile: str = "desk"
    train_fraction: float = 0.8
    jobs: int = 1

    def __post_init__(self):
        self.scale_profile = resolve_profile(self.scale_profile)

    @property
    def effective_n_samples(self) -> int:
        return self.n_samples if self.n_samples is not None else PROFILE_SAMPLES[resolve_profile(self.scale_profile)]

    @property
    def kinds(self) -> List[ModelKind]:
        return [ModelKind(k) for k in self.model_kinds]

    @property
    def fusion_strategies(self) -> List[FusionStrategy]:
        return [FusionStrategy(s) for s in self.strategies]

    def validate(self) -> None:
        self.scale_profile = resolve_profile(self.scale_profile)
        for name in ("noise_levels", "informative_pcts", "n_features_list", "model_kinds", "strategies"):
            if not getattr(self, name):
                raise ExperimentError(f"{name} must not be empty", f"The experiment needs at least one value for {name}.")
        if self.runs_per_dataset < 1:
            raise ExperimentError(f"runs_per_dataset must be at least 1, got {self.runs_per_dataset}")
        if self.scale_profile not in SCALE_PROFILES:
            raise ExperimentError(
                f"Unknown scale profile '{self.scale_profile}'",
                f"Use one of {', '.join(SCALE_PROFILES)}."
            )
        if self.jobs < 1:
            raise ExperimentError(f"jobs must be at least 1, got {self.jobs}")
        try:
            kinds = self.kinds
            strategies = self.fusion_strategies
        except ValueError as e:
            raise ExperimentError(f"Invalid model kind or strategy: {e}", str(e))
        if len(set(kinds)) != len(kinds) or len(set(strategies)) != len(strategies):
            raise ExperimentError("model_kinds and strategies must not repeat")
        if any(s.is_rate for s in strategies) and min(self.n_features_list) < 3:
            raise ExperimentError(
                "RATE strategies need at least 3 features",
                "Remove rate-* strategies or use at least 3 features."
            )
        for cell in enumerate_grid(self):
            try:
                self.data_config(cell, 0).validate()
            except DataConfigError as e:
                raise ExperimentError(f"Invalid dataset cell {cell}: {e.message}", e.user_message)

    def data_config(self, cell: "GridCell", run: int) -> DataConfig:
        return DataConfig(
            n_samples=self.effective_n_samples,
            n_features=cell.n_features,
            informative_pct=cell.informative_pct,
            noise_std=cell.noise,
            seed=cell_seed(self.seed_base, cell, run),
            train_fraction=self.train_fraction,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ExperimentError(
                f"Unknown experiment config keys: {unknown}",
                f"The experiment config has unknown keys: {', '.join(unknown)}."
            )
        return cls(**data)

    @classmethod
    def from_file(cls, path: PathLike) -> "ExperimentConfig":
        return cls.from_dict(read_json(path))


@dataclass(frozen=True)
class GridCell:
    noise: float
    informative_pct: float
    n_features: int


@dataclass(frozen=True)
class MetricScores:
    mae: float
    rmse: float
    r2: Optional[float]


@dataclass(frozen=True)
class RunRecord:
    noise: float
    informative_pct: float
    n_features: int
    run: int
    split: str
    method: str
    mae: float
    rmse: float
    r2: Optional[float]


@dataclass(frozen=True)
class ModelFitRecord:
    noise: float
    informative_pct: float
    n_features: int
    run: int
    model: str
    train_r2: float
    test_r2: float


@dataclass(frozen=True)
class AggregateRecord:
    factor: str
    level: float
    split: str
    method: str
    metric: str
    mean: Optional[float]
    std: Optional[float]
    count: int
    profile: str


@dataclass(frozen=True)
class RunFailure:
    noise: float
    informative_pct: float
    n_features: int
    run: int
    message: str


@dataclass
class ExperimentReport:
    records: List[RunRecord] = field(default_factory=list)
    aggregates: List[AggregateRecord] = field(default_factory=list)
    fits: List[ModelFitRecord] = field(default_factory=list)
    failures: List[RunFailure] = field(default_factory=list)
    profile: str = "desk"

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(r.method for r in self.records))


@dataclass(frozen=True)
class PipelineOutput:
    train: ImportanceMatrix
    test: ImportanceMatrix
    fits: Tuple[Tuple[str, float, float], ...]


def enumerate_grid(cfg: ExperimentConfig) -> List[GridCell]:
    """All (noise, informative, n_features) combinations, noise outermost."""
    return [
        GridCell(float(noise), float(informative), int(n_features))
        for noise in cfg.noise_levels
        for informative in cfg.informative_pcts
        for n_features in cfg.n_features_list
    ]


def cell_seed(seed_base: int, cell: GridCell, run: int) -> int:
    return derive_seed(seed_base, cell.noise, cell.informative_pct, cell.n_features, run)


def explainer_config_for(profile: str, base: Optional[ExplainerConfig] = None) -> ExplainerConfig:
    """Explainer settings for a scale profile; ``desk`` explains fewer rows against a smaller background."""
    base = base or ExplainerConfig()
    profile = resolve_profile(profile)
    if profile == "desk":
        return replace(
            base,
            explain_rows=min(base.explain_rows, 25),
            shap_permutations=min(base.shap_permutations, 50),
            background_k=min(base.background_k, 10),
        )
    return base


def run_pipeline(
    d: Dataset,
    model_kinds: Sequence[ModelKind],
    seed: int,
    profile: str = "desk",
    explainer_config: Optional[ExplainerConfig] = None,
) -> PipelineOutput:
    """
    Train every model once on the train split and explain it on both splits.

    Raises
    ------
    ExperimentError
        Naming the model whose training or explanation failed
    """
    explainer_config = explainer_config or explainer_config_for(profile)
    train_view, test_view = split(d)
    background = build_background(train_view.X, explainer_config, seed=derive_seed(seed, "background"))

    vectors: Dict[str, list] = {"train": [], "test": []}
    fits = []
    for kind in model_kinds:
        kind = ModelKind(kind)
        try:
            model = train(
                kind, train_view.X, train_view.y,
                default_hyperparams(kind, profile),
                seed=derive_seed(seed, kind.value),
            )
            fits.append((kind.value, score_fit(model, train_view.X, train_view.y),
                         score_fit(model, test_view.X, test_view.y)))
            for view in (train_view, test_view):
                vectors[view.name].extend(vectors_for_model(
                    model, view.X, view.y, background, explainer_config,
                    seed=derive_seed(seed, kind.value, view.name), split=view.name,
                ))
        except FifuseError as e:
            raise ExperimentError(f"{kind.label} failed: {e.message}", f"The {kind.label} model failed: {e.user_message}")

    return PipelineOutput(
        train=build_importance_matrix(vectors["train"]),
        test=build_importance_matrix(vectors["test"]),
        fits=tuple(fits),
    )


def run_single(
    d: Dataset,
    models: Sequence[ModelKind],
    seed: int,
    profile: str = "desk",
    explainer_config: Optional[ExplainerConfig] = None,
) -> Tuple[ImportanceMatrix, ImportanceMatrix]:
    """Train and matrix for one dataset; returns the (train, test) importance matrices."""
    out = run_pipeline(d, models, seed, profile, explainer_config)
    return out.train, out.test


def score(v: np.ndarray, truth: Union[GroundTruthImportance, np.ndarray]) -> MetricScores:
    """
    MAE, RMSE and R^2 of an importance vector against the ground truth.

    R^2 is None when the ground truth has zero variance.
    """
    t = np.asarray(truth.values if isinstance(truth, GroundTruthImportance) else truth, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != t.shape:
        raise ExperimentError(f"Cannot score a vector of shape {v.shape} against truth of shape {t.shape}")
    mae = float(mean_absolute_error(t, v))
    rmse = float(math.sqrt(mean_squared_error(t, v)))
    total = float(np.sum((t - t.mean()) ** 2))
    r2 = None if total == 0.0 else 1.0 - float(np.sum((v - t) ** 2)) / total
    return MetricScores(mae, rmse, r2)


def sme_vector(V: ImportanceMatrix, method: Union[AttributionMethod, str]) -> np.ndarray:
    """Single-method ensemble: mean of the rows produced by ``method``, re-normalized."""
    method = AttributionMethod(method).value
    rows = V.rows_for_method(method)
    if not rows:
        raise ExperimentError(f"No {method} rows in the importance matrix")
    fused, _ = l1_normalize(V.values[rows].mean(axis=0))
    return fused


def _score_matrix(V: ImportanceMatrix, truth: GroundTruthImportance, strategies: Sequence[FusionStrategy],
                  fusion: FusionConfig) -> List[Tuple[str, MetricScores]]:
    present = {label.method for label in V.labels}
    scored = [(m, score(sme_vector(V, m), truth)) for m in SME_METHODS if m in present]
    for strategy in strategies:
        result = fuse(V, strategy, alpha=fusion.alpha, bin_width=fusion.bin_width)
        scored.append((strategy.value, score(result.final, truth)))
    return scored


@dataclass
class _TaskOutcome:
    records: List[RunRecord]
    fits: List[ModelFitRecord]
    failure: Optional[RunFailure]


def _run_task(cfg: ExperimentConfig, cell: GridCell, run: int, explainer_config: ExplainerConfig,
              fusion: FusionConfig) -> _TaskOutcome:
    if cfg.jobs > 1:
        torch.set_num_threads(1)

    key = dict(noise=cell.noise, informative_pct=cell.informative_pct, n_features=cell.n_features, run=run)
    try:
        with ResourceTracker(f"cell {cell} run {run}", log_threshold_s=30.0):
            d = generate_dataset(cfg.data_config(cell, run))
            truth = ground_truth_importance(d)
            out = run_pipeline(d, cfg.kinds, cell_seed(cfg.seed_base, cell, run), cfg.scale_profile, explainer_config)
            records = []
            for split_name, V in (("train", out.train), ("test", out.test)):
                for method, s in _score_matrix(V, truth, cfg.fusion_strategies, fusion):
                    records.append(RunRecord(**key, split=split_name, method=method, mae=s.mae, rmse=s.rmse, r2=s.r2))
    except RUN_ERRORS as e:
        logger.warning(f"Run {run} of {cell} failed: {e}")
        return _TaskOutcome([], [], RunFailure(**key, message=str(e)))
    finally:
        release_memory()

    fits = [ModelFitRecord(**key, model=m, train_r2=tr, test_r2=te) for m, tr, te in out.fits]
    return _TaskOutcome(records, fits, None)


def _nan_to_none(value: float) -> Optional[float]:
    return None if value is None or not math.isfinite(value) else float(value)


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=RECORD_COLUMNS)


def aggregate(records: Sequence[RunRecord], profile: str = "desk") -> List[AggregateRecord]:
    """
    Mean and population standard deviation of every metric per factor level.

    Groups are (factor, level, split, method); ``count`` is the number of
    records in the group.
    """
    frame = records_frame(records)
    if frame.empty:
        return []
    frame["r2"] = pd.to_numeric(frame["r2"], errors="coerce")

    aggregates = []
    for factor, column in FACTORS.items():
        grouped = frame.groupby([column, "split", "method"], sort=False)
        for (level, split_name, method), group in grouped:
            for metric in METRICS:
                values = group[metric].dropna().to_numpy(dtype=float)
                aggregates.append(AggregateRecord(
                    factor=factor,
                    level=float(level),
                    split=split_name,
                    method=method,
                    metric=metric,
                    mean=_nan_to_none(values.mean()) if values.size else None,
                    std=_nan_to_none(values.std(ddof=0)) if values.size else None,
                    count=int(len(group)),
                    profile=profile,
                ))
    return aggregates


def run_experiment(
    cfg: ExperimentConfig,
    fusion: Optional[FusionConfig] = None,
    explainer_config: Optional[ExplainerConfig] = None,
    progress: Optional[ProgressReporter] = None,
) -> ExperimentReport:
    """
    Run every grid cell ``runs_per_dataset`` times and aggregate the scores.

    Parameters
    ----------
    cfg : ExperimentConfig
        Grid, models, strategies and scale
    fusion : FusionConfig, optional
        Significance level and bin width for the strategies
    explainer_config : ExplainerConfig, optional
        Base explainer settings, adjusted for the scale profile
    progress : ProgressReporter, optional
        Receives one update per finished run

    Returns
    -------
    ExperimentReport
        Records in grid order, whatever the number of workers

    Raises
    ------
    ExperimentError
        If the config is invalid or every run of some cell failed
    """
    cfg.validate()
    fusion = fusion or FusionConfig()
    explainer_config = explainer_config_for(cfg.scale_profile, explainer_config)
    progress = progress or ProgressReporter()

    cells = enumerate_grid(cfg)
    tasks = [(cell, run) for cell in cells for run in range(cfg.runs_per_dataset)]
    logger.info(
        f"Running {len(cells)} datasets x {cfg.runs_per_dataset} runs "
        f"({cfg.scale_profile} profile, {cfg.jobs} worker(s))"
    )

    report = ExperimentReport(profile=cfg.scale_profile)
    failed_runs: Dict[GridCell, int] = {}
    outcomes = Parallel(n_jobs=cfg.jobs, return_as="generator")(
        delayed(_run_task)(cfg, cell, run, explainer_config, fusion) for cell, run in tasks
    )
    for done, ((cell, run), outcome) in enumerate(zip(tasks, outcomes), start=1):
        report.records.extend(outcome.records)
        report.fits.extend(outcome.fits)
        if outcome.failure is not None:
            report.failures.append(outcome.failure)
            failed_runs[cell] = failed_runs.get(cell, 0) + 1
        progress.update(done, len(tasks), f"noise={cell.noise} inf={cell.informative_pct} M={cell.n_features}")

    dead = [cell for cell, count in failed_runs.items() if count == cfg.runs_per_dataset]
    if dead:
        raise ExperimentError(
            f"Every run failed for {len(dead)} dataset(s), first {dead[0]}: {report.failures[0].message}",
            "All runs failed for at least one dataset; see the log for details."
        )

    report.aggregates = aggregate(report.records, cfg.scale_profile)
    logger.info(f"Experiment finished: {len(report.records)} records, {len(report.failures)} failed runs")
    return report


def aggregate_table(records: Union[Sequence[RunRecord], pd.DataFrame], factor: str,
                    metric: str = "mae", split: str = "test") -> pd.DataFrame:
    """
    Methods by factor levels, each cell ``mean±std``.

    Parameters
    ----------
    records : sequence of RunRecord or DataFrame
        Run records, e.g. read back from ``records.csv``
    factor : str
        One of ``noise``, ``informative``, ``nfeat``
    metric : str
        ``mae``, ``rmse`` or ``r2``
    split : str
        ``train`` or ``test``
    """
    if factor not in FACTORS:
        raise ExperimentError(f"Unknown factor '{factor}'", f"Use one of {', '.join(FACTORS)}.")
    if metric not in METRICS:
        raise ExperimentError(f"Unknown metric '{metric}'", f"Use one of {', '.join(METRICS)}.")
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records)
    column = FACTORS[factor]
    levels = sorted(frame[column].unique().tolist()) if not frame.empty else []
    methods = list(dict.fromkeys(frame["method"])) if not frame.empty else []

    subset = frame[frame["split"] == split].copy()
    subset[metric] = pd.to_numeric(subset[metric], errors="coerce")
    stats = subset.groupby(["method", column])[metric].agg(mean="mean", std=lambda s: s.std(ddof=0))

    table = pd.DataFrame(index=pd.Index(methods, name="method"), columns=[_level_label(lv) for lv in levels])
    for method in methods:
        for level in levels:
            if (method, level) in stats.index:
                row = stats.loc[(method, level)]
                table.loc[method, _level_label(level)] = f"{row['mean']:.4f}±{row['std']:.4f}"
            else:
                table.loc[method, _level_label(level)] = ""
    return table


def _level_label(level: float) -> str:
    return f"{level:g}"


@dataclass(frozen=True)
class MethodSummary:
    table: pd.DataFrame
    best_sme: Optional[str]
    best_mme: Optional[str]
    relative_improvement: Optional[float]


def summarize_methods(report: ExperimentReport, split: str = "test", metric: str = "mae") -> MethodSummary:
    """
    Overall mean error per method, best first, and the relative
    improvement of the best fusion strategy over the best single method.
    """
    frame = records_frame(report.records)
    frame = frame[frame["split"] == split].copy()
    frame[metric] = pd.to_numeric(frame[metric], errors="coerce")
    table = frame.groupby("method")[metric].agg(["mean", "std", "count"]).sort_values("mean", ascending=(metric != "r2"))
    table["family"] = ["sme" if m in SME_METHODS else "mme" for m in table.index]

    sme = table[table["family"] == "sme"]
    mme = table[table["family"] == "mme"]
    best_sme = sme.index[0] if len(sme) else None
    best_mme = mme.index[0] if len(mme) else None
    improvement = None
    if best_sme is not None and best_mme is not None and metric != "r2":
        base = float(sme.loc[best_sme, "mean"])
        if base > 0:
            improvement = (base - float(mme.loc[best_mme, "mean"])) / base
    return MethodSummary(table, best_sme, best_mme, improvement)


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> Path:
    try:
        frame.to_csv(path, index=index, float_format="%.17g")
    except OSError as e:
        raise ReportIOError(f"Cannot write {path}: {e}", f"Could not write {path}.")
    return path


def export_report(r: ExperimentReport, path: PathLike, format: str = "csv") -> List[Path]:
    """
    Write a report into directory ``path``.

    ``csv`` writes ``records.csv``, ``fits.csv``, ``aggregates.csv`` and
    one methods-by-levels table per factor, metric and split
    (``noise_mae_test.csv`` and so on). ``json`` writes ``report.json``.

    Returns
    -------
    list of Path
        Written files
    """
    out_dir = Path(path)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportIOError(f"Cannot create output directory {out_dir}: {e}", f"Could not create {out_dir}.")

    if format == "json":
        payload = {
            "profile": r.profile,
            "records": [asdict(x) for x in r.records],
            "aggregates": [asdict(x) for x in r.aggregates],
            "fits": [asdict(x) for x in r.fits],
            "failures": [asdict(x) for x in r.failures],
        }
        return [write_json(out_dir / "report.json", payload)]
    if format != "csv":
        raise ReportIOError(f"Unknown report format '{format}'", "Use csv or json.")

    written = [
        _write_csv(records_frame(r.records), out_dir / "records.csv"),
        _write_csv(pd.DataFrame([asdict(x) for x in r.fits], columns=FIT_COLUMNS), out_dir / "fits.csv"),
        _write_csv(pd.DataFrame([asdict(x) for x in r.aggregates], columns=AGGREGATE_COLUMNS),
                   out_dir / "aggregates.csv"),
    ]
    if r.records:
        for factor in FACTORS:
            for metric in METRICS:
                for split_name in SPLITS:
                    table = aggregate_table(r.records, factor, metric, split_name)
                    written.append(_write_csv(table, out_dir / f"{factor}_{metric}_{split_name}.csv", index=True))
    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def load_report(path: PathLike) -> ExperimentReport:
    """Re-import a report written with ``format="json"`` (a directory or the file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    data = read_json(path)
    try:
        return ExperimentReport(
            records=[RunRecord(**x) for x in data["records"]],
            aggregates=[AggregateRecord(**x) for x in data["aggregates"]],
            fits=[ModelFitRecord(**x) for x in data.get("fits", [])],
            failures=[RunFailure(**x) for x in data.get("failures", [])],
            profile=data.get("profile", "desk"),
        )
    except (KeyError, TypeError) as e:
        raise ReportIOError(f"{path} is not an experiment report: {e}", f"{path} is not a fifuse report.")


def load_records_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportIOError(f"Cannot read records CSV {path}: {e}", f"Could not read {path}.")
    missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
    if missing:
        raise ReportIOError(f"{path} lacks columns {missing}", f"{path} is not a fifuse records file.")
    return frame
