"""
Fusion of importance vectors from several models and methods.

Raw vectors are mapped onto the simplex and stacked into an
:class:`ImportanceMatrix`; a :class:`FusionStrategy` then reduces the
matrix column by column (or row by row for the rank-correlation
strategies) to one final importance vector.
"""

from typing import Any, Dict, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
import logging

import numpy as np
import pandas as pd

from ._explainers import ImportanceVector
from ._stats import kendall_tau, rank_descending, spearman_rho, thompson_tau_threshold
from ._utils import FusionError, PathLike, ReportIOError, check_finite, feature_columns, l1_normalize

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["model", "method", "split"]


class FusionStrategy(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    MODE = "mode"
    BOX_WHISKERS = "box-whiskers"
    TAU_TEST = "tau-test"
    MAJORITY_VOTE = "majority-vote"
    RATE_KENDALL = "rate-kendall"
    RATE_SPEARMAN = "rate-spearman"

    @property
    def is_rate(self) -> bool:
        return self in (FusionStrategy.RATE_KENDALL, FusionStrategy.RATE_SPEARMAN)


@dataclass(frozen=True)
class SourceLabel:
    model: str
    method: str
    split: str

    def __str__(self) -> str:
        return f"{self.model}/{self.method}/{self.split}"


@dataclass(frozen=True)
class ImportanceMatrix:
    """
    N normalized importance vectors over M features.

    Every row is non-negative and sums to one. ``degenerate_rows`` lists
    rows whose raw vector was all zeros and became uniform.
    """
    values: np.ndarray
    labels: Tuple[SourceLabel, ...]
    degenerate_rows: Tuple[int, ...] = ()

    @property
    def n_sources(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def rows_for_method(self, method: str) -> List[int]:
        return [i for i, label in enumerate(self.labels) if label.method == method]


@dataclass(frozen=True)
class FusionResult:
    """
    Outcome of one fusion strategy.

    ``raw`` is the fused vector before re-normalization, ``kept_mask``
    marks the matrix entries that fed each fused column, and
    ``retained_sources`` lists rows with at least one kept entry.
    ``fallback`` is set when a rank-correlation strategy retained no row
    and averaged everything instead.
    """
    final: np.ndarray
    raw: np.ndarray
    strategy: FusionStrategy
    retained_sources: Tuple[int, ...]
    kept_mask: np.ndarray = field(repr=False)
    truth_table: Optional[np.ndarray] = field(default=None, repr=False)
    fallback: bool = False

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "strategy": self.strategy.value,
            "final": self.final.tolist(),
            "raw": self.raw.tolist(),
            "retained_sources": list(self.retained_sources),
            "fallback": self.fallback,
        }
        if self.truth_table is not None:
            payload["truth_table"] = self.truth_table.tolist()
        return payload


def matrix_from_rows(rows: np.ndarray, labels: Optional[Sequence[SourceLabel]] = None) -> ImportanceMatrix:
    """
    Normalize raw rows (|v| / sum |v|) into an importance matrix.

    Raises
    ------
    FusionError
        If there are no rows, rows are ragged or hold non-finite values
    """
    try:
        raw = np.asarray(rows, dtype=float)
    except ValueError as e:
        raise FusionError(f"Importance vectors have different lengths: {e}")
    if raw.ndim != 2 or raw.shape[0] == 0 or raw.shape[1] == 0:
        raise FusionError(f"Need a non-empty list of equal-length vectors, got shape {raw.shape}")
    check_finite("importance matrix", raw, FusionError)

    if labels is None:
        labels = [SourceLabel("unknown", "unknown", "unknown")] * raw.shape[0]
    if len(labels) != raw.shape[0]:
        raise FusionError(f"{len(labels)} labels for {raw.shape[0]} rows")

    normalized = np.empty_like(raw)
    degenerate = []
    for i, row in enumerate(raw):
        normalized[i], all_zero = l1_normalize(row)
        if all_zero:
            logger.warning(f"Importance vector {labels[i]} is all zeros, using the uniform vector")
            degenerate.append(i)
    normalized.setflags(write=False)
    return ImportanceMatrix(values=normalized, labels=tuple(labels), degenerate_rows=tuple(degenerate))


def build_importance_matrix(vectors: Sequence[ImportanceVector]) -> ImportanceMatrix:
    """
    Stack importance vectors into a normalized matrix.

    Parameters
    ----------
    vectors : sequence of ImportanceVector
        Non-empty, all of the same length

    Returns
    -------
    ImportanceMatrix
        One simplex row per vector, in input order
    """
    if not vectors:
        raise FusionError("Cannot build an importance matrix from no vectors")
    lengths = {v.values.shape[0] for v in vectors}
    if len(lengths) != 1:
        raise FusionError(
            f"Importance vectors have different lengths {sorted(lengths)}",
            "All importance vectors must cover the same features."
        )
    labels = [SourceLabel(v.source_model.value, v.source_method.value, v.split) for v in vectors]
    return matrix_from_rows(np.stack([v.values for v in vectors]), labels)


def _result(raw: np.ndarray, strategy: FusionStrategy, kept_mask: np.ndarray,
            truth_table: Optional[np.ndarray] = None, fallback: bool = False) -> FusionResult:
    final, all_zero = l1_normalize(raw)
    if all_zero:
        logger.warning(f"{strategy.value} fused an all-zero vector, returning the uniform vector")
    retained = tuple(int(i) for i in np.flatnonzero(kept_mask.any(axis=1)))
    return FusionResult(
        final=final,
        raw=np.asarray(raw, dtype=float),
        strategy=strategy,
        retained_sources=retained,
        kept_mask=kept_mask,
        truth_table=truth_table,
        fallback=fallback,
    )


def fuse_mean(V: ImportanceMatrix) -> FusionResult:
    return _result(V.values.mean(axis=0), FusionStrategy.MEAN, np.ones(V.values.shape, dtype=bool))


def fuse_median(V: ImportanceMatrix) -> FusionResult:
    return _result(np.median(V.values, axis=0), FusionStrategy.MEDIAN, np.ones(V.values.shape, dtype=bool))


def _bin_index(values, bin_width: float) -> np.ndarray:
    # Snap quotients that land a rounding error below an edge onto it
    return np.floor(np.round(np.asarray(values, dtype=float) / bin_width, 9)).astype(np.int64)


def _modal_bin(column: np.ndarray, bin_width: float) -> np.ndarray:
    bins = _bin_index(column, bin_width)
    labels, counts = np.unique(bins, return_counts=True)
    tied = labels[counts == counts.max()]
    if tied.size > 1:
        median_bin = int(_bin_index(np.median(column), bin_width))
        # Nearest tied bin to the median's bin; lower bin on equal distance
        chosen = tied[np.argmin(np.abs(tied - median_bin))]
    else:
        chosen = tied[0]
    return bins == chosen


def fuse_mode(V: ImportanceMatrix, bin_width: float = 0.05) -> FusionResult:
    """
    Mean of the most populated fixed-width bin in each column.

    Bins are [k * bin_width, (k + 1) * bin_width). When several bins are
    equally populated the one holding the column median wins, else the
    tied bin closest to it.
    """
    if not bin_width > 0:
        raise FusionError(f"bin_width must be positive, got {bin_width}")
    kept = np.column_stack([_modal_bin(V.values[:, j], bin_width) for j in range(V.n_features)])
    raw = np.array([V.values[kept[:, j], j].mean() for j in range(V.n_features)])
    return _result(raw, FusionStrategy.MODE, kept)


def fuse_box_whiskers(V: ImportanceMatrix) -> FusionResult:
    """Column means after dropping values outside the Tukey fences Q1 - 1.5 IQR, Q3 + 1.5 IQR."""
    q1, q3 = np.percentile(V.values, [25, 75], axis=0)
    iqr = q3 - q1
    kept = (V.values >= q1 - 1.5 * iqr) & (V.values <= q3 + 1.5 * iqr)
    empty = ~kept.any(axis=0)
    kept[:, empty] = True
    raw = np.array([V.values[kept[:, j], j].mean() for j in range(V.n_features)])
    return _result(raw, FusionStrategy.BOX_WHISKERS, kept)


def _thompson_keep(column: np.ndarray, alpha: float) -> np.ndarray:
    keep = np.ones(column.shape[0], dtype=bool)
    while keep.sum() > 2:
        idx = np.flatnonzero(keep)
        values = column[idx]
        s = values.std(ddof=1)
        if s == 0.0:
            break
        deviation = np.abs(values - values.mean())
        worst = int(np.argmax(deviation))
        if deviation[worst] > thompson_tau_threshold(idx.size, alpha) * s:
            keep[idx[worst]] = False
        else:
            break
    return keep


def fuse_tau_test(V: ImportanceMatrix, alpha: float = 0.05) -> FusionResult:
    """
    Column means after iterative Modified Thompson Tau outlier rejection.

    The value farthest from the column mean is rejected while its
    deviation exceeds tau * s, one value at a time, down to two values.
    """
    if not 0.0 < alpha < 1.0:
        raise FusionError(f"alpha must lie in (0, 1), got {alpha}")
    kept = np.column_stack([_thompson_keep(V.values[:, j], alpha) for j in range(V.n_features)])
    raw = np.array([V.values[kept[:, j], j].mean() for j in range(V.n_features)])
    return _result(raw, FusionStrategy.TAU_TEST, kept)


def fuse_majority_vote(V: ImportanceMatrix) -> FusionResult:
    """
    Per feature, the mean importance over the rows agreeing on its modal rank.

    Features are ranked within each row (rank 1 is the most important).
    Ties between modal ranks go to the better rank.
    """
    ranks = np.stack([rank_descending(row) for row in V.values])
    kept = np.zeros(V.values.shape, dtype=bool)
    for j in range(V.n_features):
        labels, counts = np.unique(ranks[:, j], return_counts=True)
        modal = labels[counts == counts.max()].min()
        kept[:, j] = ranks[:, j] == modal
    raw = np.array([V.values[kept[:, j], j].mean() for j in range(V.n_features)])
    return _result(raw, FusionStrategy.MAJORITY_VOTE, kept)


def rate_truth_table(V: ImportanceMatrix, correlation: str = "kendall", alpha: float = 0.05) -> np.ndarray:
    """
    Pairwise agreement between sources.

    Entry (i, j), i != j, is True when the rank correlation of rows i and j
    is positive and significant at ``alpha``. The diagonal is False.
    """
    corr = {"kendall": kendall_tau, "spearman": spearman_rho}.get(correlation)
    if corr is None:
        raise FusionError(f"Unknown rank correlation '{correlation}'")
    if V.n_features < 3:
        raise FusionError(
            f"Rank correlation needs at least 3 features, got {V.n_features}",
            "RATE fusion needs at least three features."
        )
    n = V.n_sources
    truth = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            r = corr(V.values[i], V.values[j])
            truth[i, j] = truth[j, i] = (r.p_value < alpha) and (r.coefficient > 0)
    return truth


def fuse_rate(V: ImportanceMatrix, correlation: str = "kendall", alpha: float = 0.05) -> FusionResult:
    """
    Rank correlation with majority vote.

    A source survives when it agrees (see :func:`rate_truth_table`) with
    strictly more than half of the other sources. The result is the mean
    of the survivors; with no survivor it is the mean of all rows and
    ``fallback`` is set.

    Raises
    ------
    FusionError
        If the matrix has fewer than three features
    """
    if not 0.0 < alpha < 1.0:
        raise FusionError(f"alpha must lie in (0, 1), got {alpha}")
    strategy = FusionStrategy.RATE_KENDALL if correlation == "kendall" else FusionStrategy.RATE_SPEARMAN
    truth = rate_truth_table(V, correlation, alpha)
    n = V.n_sources

    if n == 1:
        survivors = np.ones(1, dtype=bool)
    else:
        survivors = truth.sum(axis=1) > (n - 1) / 2.0

    fallback = not survivors.any()
    if fallback:
        logger.warning(f"{strategy.value}: no source agrees with a majority, falling back to the mean of all rows")
        survivors = np.ones(n, dtype=bool)
    else:
        dropped = [str(V.labels[i]) for i in np.flatnonzero(~survivors)]
        if dropped:
            logger.debug(f"{strategy.value} discarded {dropped}")

    kept = np.repeat(survivors[:, None], V.n_features, axis=1)
    return _result(V.values[survivors].mean(axis=0), strategy, kept, truth_table=truth, fallback=fallback)


def fuse(
    V: ImportanceMatrix,
    strategy: Union[FusionStrategy, str],
    alpha: float = 0.05,
    bin_width: float = 0.05,
) -> FusionResult:
    """
    Fuse a matrix with the named strategy.

    Parameters
    ----------
    V : ImportanceMatrix
        Normalized importance matrix
    strategy : FusionStrategy or str
        Strategy or its kebab-case name
    alpha : float
        Significance level for tau-test and the RATE strategies
    bin_width : float
        Bin width for the mode strategy

    Returns
    -------
    FusionResult
    """
    try:
        strategy = FusionStrategy(strategy)
    except ValueError:
        names = ", ".join(s.value for s in FusionStrategy)
        raise FusionError(f"Unknown fusion strategy '{strategy}'", f"Choose one of: {names}.")

    if strategy is FusionStrategy.MEAN:
        return fuse_mean(V)
    if strategy is FusionStrategy.MEDIAN:
        return fuse_median(V)
    if strategy is FusionStrategy.MODE:
        return fuse_mode(V, bin_width)
    if strategy is FusionStrategy.BOX_WHISKERS:
        return fuse_box_whiskers(V)
    if strategy is FusionStrategy.TAU_TEST:
        return fuse_tau_test(V, alpha)
    if strategy is FusionStrategy.MAJORITY_VOTE:
        return fuse_majority_vote(V)
    if strategy is FusionStrategy.RATE_KENDALL:
        return fuse_rate(V, "kendall", alpha)
    return fuse_rate(V, "spearman", alpha)


def vectors_to_frame(vectors: Sequence[ImportanceVector]) -> pd.DataFrame:
    if not vectors:
        raise FusionError("No importance vectors to write")
    columns = feature_columns(vectors[0].n_features)
    records = []
    for v in vectors:
        if v.n_features != len(columns):
            raise FusionError("Importance vectors have different lengths")
        record = {"model": v.source_model.value, "method": v.source_method.value, "split": v.split}
        record.update(zip(columns, v.values.tolist()))
        records.append(record)
    return pd.DataFrame.from_records(records, columns=LABEL_COLUMNS + columns)


def write_vectors_csv(vectors: Sequence[ImportanceVector], path: PathLike, append: bool = False) -> Path:
    """
    Write importance vectors, one row per source: ``model,method,split,f0..f{M-1}``.

    With ``append`` the rows are added to an existing file, whose feature
    count must match.
    """
    path = Path(path)
    frame = vectors_to_frame(vectors)
    if append and path.exists():
        existing = _read_frame(path)
        if list(existing.columns) != list(frame.columns):
            raise FusionError(
                f"{path} holds {len(existing.columns) - 3} features, new vectors have {len(frame.columns) - 3}",
                f"Cannot append to {path}: the feature count differs."
            )
        frame = pd.concat([existing, frame], ignore_index=True)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise ReportIOError(f"Cannot write importance CSV {path}: {e}", f"Could not write {path}.")
    logger.info(f"Wrote {len(frame)} importance vectors to {path}")
    return path


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportIOError(f"Cannot read importance CSV {path}: {e}", f"Could not read {path}.")


def read_matrix_csv(path: PathLike) -> ImportanceMatrix:
    """
    Read an importance CSV into a normalized matrix.

    Label columns are optional; every ``f<i>`` column is a feature.
    """
    path = Path(path)
    frame = _read_frame(path)
    features = [c for c in frame.columns if c not in LABEL_COLUMNS]
    if not features or frame.empty:
        raise ReportIOError(f"{path} has no importance rows", f"{path} does not contain an importance matrix.")

    labels = [
        SourceLabel(*(str(row.get(c, "unknown")) for c in LABEL_COLUMNS))
        for row in frame.to_dict("records")
    ]
    try:
        rows = frame[features].to_numpy(dtype=float)
    except ValueError as e:
        raise ReportIOError(f"{path} has non-numeric importance values: {e}", f"{path} is not a valid matrix.")
    return matrix_from_rows(rows, labels)
