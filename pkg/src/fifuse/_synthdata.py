"""
Synthetic regression datasets with known feature importance.

Datasets follow a noisy linear model over Gaussian features. Only an
exact, configurable fraction of the features carries a nonzero
coefficient, so the ground-truth importance of every feature is known.
"""

from typing import Any, Dict, Optional, Tuple
from dataclasses import dataclass, asdict, field
from pathlib import Path
import logging
import math

import numpy as np
import pandas as pd
from sklearn.preprocessing import minmax_scale

from ._utils import (
    DataConfigError,
    PathLike,
    ReportIOError,
    feature_columns,
    read_json,
    write_json,
)

logger = logging.getLogger(__name__)

COEFFICIENT_RANGE = (1.0, 100.0)


def informative_count(n_features: int, informative_pct: float) -> int:
    """Number of informative features, rounding halves up."""
    return int(math.floor(n_features * informative_pct / 100.0 + 0.5))


@dataclass(frozen=True)
class DataConfig:
    """Parameters of one synthetic regression dataset."""
    n_samples: int = 500
    n_features: int = 20
    informative_pct: float = 100.0
    noise_std: float = 0.0
    seed: int = 0
    train_fraction: float = 0.8

    def validate(self) -> None:
        if self.n_samples < 2:
            raise DataConfigError(
                f"n_samples must be at least 2, got {self.n_samples}",
                "A dataset needs at least two rows."
            )
        if self.n_features < 1:
            raise DataConfigError(
                f"n_features must be positive, got {self.n_features}",
                "A dataset needs at least one feature."
            )
        if not 0.0 < self.informative_pct <= 100.0:
            raise DataConfigError(f"informative_pct must lie in (0, 100], got {self.informative_pct}")
        if informative_count(self.n_features, self.informative_pct) < 1:
            raise DataConfigError(
                f"{self.informative_pct}% of {self.n_features} features rounds to zero informative features",
                "Increase the informative percentage or the number of features."
            )
        if not self.noise_std >= 0.0:
            raise DataConfigError(f"noise_std must be non-negative, got {self.noise_std}")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if not 0 <= self.seed < 2 ** 64:
            raise DataConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        n_train = int(math.floor(self.n_samples * self.train_fraction))
        if n_train < 1 or n_train >= self.n_samples:
            raise DataConfigError(
                f"train_fraction {self.train_fraction} leaves an empty split for {self.n_samples} rows"
            )

    @property
    def n_informative(self) -> int:
        return informative_count(self.n_features, self.informative_pct)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SplitView:
    X: np.ndarray
    y: np.ndarray
    name: str


@dataclass(frozen=True)
class Dataset:
    """Generated data: scaled features, targets and the generating coefficients."""
    X: np.ndarray
    y: np.ndarray
    true_coefficients: np.ndarray
    config: DataConfig
    split_index: int
    X_raw: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GroundTruthImportance:
    values: np.ndarray


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def generate_dataset(config: DataConfig) -> Dataset:
    """
    Generate a seeded synthetic regression dataset.

    Parameters
    ----------
    config : DataConfig
        Generation parameters

    Returns
    -------
    Dataset
        Rows shuffled once, features min-max scaled per column to [0, 1],
        ``y = X_raw @ true_coefficients + noise``

    Raises
    ------
    DataConfigError
        If the configuration is invalid
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, m = config.n_samples, config.n_features

    X_raw = rng.standard_normal((n, m))

    informative = np.sort(rng.choice(m, size=config.n_informative, replace=False))
    coefficients = np.zeros(m)
    coefficients[informative] = rng.uniform(*COEFFICIENT_RANGE, size=informative.size)

    y = X_raw @ coefficients
    if config.noise_std > 0:
        y = y + rng.normal(0.0, config.noise_std, size=n)

    order = rng.permutation(n)
    X_raw = X_raw[order]
    y = y[order]

    # Fitted on all rows, train and test alike
    X = minmax_scale(X_raw, feature_range=(0.0, 1.0), axis=0)

    split_index = int(math.floor(n * config.train_fraction))
    logger.info(
        f"Generated dataset n={n} M={m} informative={config.n_informative} "
        f"noise={config.noise_std} seed={config.seed}"
    )
    return Dataset(
        X=_readonly(X),
        y=_readonly(y),
        true_coefficients=_readonly(coefficients),
        config=config,
        split_index=split_index,
        X_raw=_readonly(X_raw),
    )


def ground_truth_importance(d: Dataset) -> GroundTruthImportance:
    """
    L1-normalized absolute coefficients of the generating model.

    Parameters
    ----------
    d : Dataset
        Dataset with at least one nonzero coefficient

    Returns
    -------
    GroundTruthImportance
        Non-negative values summing to one, zero exactly where the
        coefficient is zero
    """
    magnitude = np.abs(np.asarray(d.true_coefficients, dtype=float))
    total = magnitude.sum()
    if total <= 0:
        raise DataConfigError("Ground truth is undefined when every coefficient is zero")
    return GroundTruthImportance(values=magnitude / total)


def split(d: Dataset) -> Tuple[SplitView, SplitView]:
    """Train rows are the first ``split_index`` rows, test rows the rest."""
    k = d.split_index
    return (
        SplitView(X=d.X[:k], y=d.y[:k], name="train"),
        SplitView(X=d.X[k:], y=d.y[k:], name="test"),
    )


def _sidecar_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".json")


def save_dataset(d: Dataset, path: PathLike) -> Tuple[Path, Path]:
    """
    Export a dataset as CSV plus a JSON sidecar.

    The CSV has header ``f0,...,f{M-1},y`` and keeps the shuffled row
    order; the sidecar holds the configuration, the split index and the
    true coefficients. Floats are written with round-trip precision.

    Returns
    -------
    tuple of Path
        CSV path and sidecar path
    """
    csv_path = Path(path)
    frame = pd.DataFrame(np.asarray(d.X), columns=feature_columns(d.n_features))
    frame["y"] = np.asarray(d.y)
    try:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(csv_path, index=False, float_format="%.17g")
    except OSError as e:
        raise ReportIOError(f"Cannot write dataset CSV {csv_path}: {e}", f"Could not write {csv_path}.")

    sidecar = dict(d.config.to_dict())
    sidecar["split_index"] = d.split_index
    sidecar["true_coefficients"] = [float(c) for c in d.true_coefficients]
    sidecar_path = write_json(_sidecar_path(csv_path), sidecar)
    logger.info(f"Saved dataset to {csv_path} (+ {sidecar_path.name})")
    return csv_path, sidecar_path


def load_dataset(path: PathLike) -> Dataset:
    """
    Load a dataset written by :func:`save_dataset`.

    Raw (unscaled) features are not stored, so ``X_raw`` is None.
    """
    csv_path = Path(path)
    meta = read_json(_sidecar_path(csv_path))
    try:
        frame = pd.read_csv(csv_path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as e:
        raise ReportIOError(f"Cannot read dataset CSV {csv_path}: {e}", f"Could not read {csv_path}.")

    coefficients = np.asarray(meta.pop("true_coefficients"), dtype=float)
    split_index = int(meta.pop("split_index"))
    config = DataConfig(**meta)
    columns = feature_columns(config.n_features)
    missing = [c for c in columns + ["y"] if c not in frame.columns]
    if missing:
        raise ReportIOError(f"{csv_path} lacks columns {missing}", f"{csv_path} is not a fifuse dataset.")

    return Dataset(
        X=_readonly(frame[columns].to_numpy(dtype=float)),
        y=_readonly(frame["y"].to_numpy(dtype=float)),
        true_coefficients=_readonly(coefficients),
        config=config,
        split_index=split_index,
    )
