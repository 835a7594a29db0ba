"""
Global feature attribution methods.

Permutation importance and Shapley values are model agnostic; Integrated
Gradients needs a differentiable model. Every method reduces to one
:class:`ImportanceVector` per (model, method, split).
"""

from typing import List, Optional, Sequence, Tuple
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
import torch
from captum.attr import IntegratedGradients
from sklearn.cluster import KMeans
from sklearn.metrics import mean_squared_error

from ._config import ExplainerConfig
from ._models import ModelKind, TrainedModel, predict
from ._resources import ResourceTracker
from ._utils import ExplainerError, check_finite

logger = logging.getLogger(__name__)

# Rows per prediction call when evaluating coalitions
COALITION_CHUNK = 1 << 18

# k-means stops once no center moves this far in an iteration
CENTER_SHIFT_TOL = 1e-6


class AttributionMethod(str, Enum):
    PI = "pi"
    SHAP = "shap"
    IG = "ig"


@dataclass(frozen=True)
class ImportanceVector:
    """Raw global importance of every feature from one source."""
    values: np.ndarray
    source_model: ModelKind
    source_method: AttributionMethod
    split: str = "train"
    warnings: Tuple[str, ...] = ()

    @property
    def label(self) -> str:
        return f"{self.source_model.value}/{self.source_method.value}/{self.split}"

    @property
    def n_features(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ShapleyWeights:
    """Weight of a marginal contribution by the size k of the coalition it extends."""
    n_features: int
    weights: np.ndarray

    def weight(self, k: int) -> float:
        return float(self.weights[k])


@dataclass(frozen=True)
class Baseline:
    values: np.ndarray

    @classmethod
    def zeros(cls, n_features: int) -> "Baseline":
        return cls(np.zeros(n_features))


@dataclass(frozen=True)
class BackgroundSet:
    """Weighted reference points that stand in for absent features."""
    centers: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def applicable_methods(kind: ModelKind) -> List[AttributionMethod]:
    """PI and SHAP for every model, IG only for the neural network."""
    methods = [AttributionMethod.PI, AttributionMethod.SHAP]
    if ModelKind(kind) is ModelKind.DEEP_NEURAL_NETWORK:
        methods.append(AttributionMethod.IG)
    return methods


def _vector(values: np.ndarray, m: TrainedModel, method: AttributionMethod, split: str,
            warnings: Tuple[str, ...] = ()) -> ImportanceVector:
    check_finite(f"{method.value} importance", values, ExplainerError)
    values = np.asarray(values, dtype=float)
    values.setflags(write=False)
    return ImportanceVector(values, m.kind, method, split, warnings)


def _check_inputs(m: TrainedModel, X: np.ndarray, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ExplainerError(f"{name} must be a non-empty matrix, got shape {X.shape}")
    if X.shape[1] != m.n_features:
        raise ExplainerError(
            f"{name} has {X.shape[1]} features, model expects {m.n_features}",
            "The data does not have the number of features the model was trained on."
        )
    check_finite(name, X, ExplainerError)
    return X


def permutation_importance(
    m: TrainedModel,
    X: np.ndarray,
    y: np.ndarray,
    repeats: int = 5,
    seed: int = 0,
    split: str = "train",
) -> ImportanceVector:
    """
    Increase in mean squared error when a feature column is shuffled.

    ``repeats`` row permutations are drawn once from ``seed`` and applied
    to every column in turn; each column is restored before the next one
    is shuffled. The importance is the mean error increase over repeats.

    Parameters
    ----------
    m : TrainedModel
        Model to explain
    X, y : numpy.ndarray
        Evaluation rows and targets
    repeats : int
        Shuffles per feature, at least 1
    seed : int
        Seed of the row permutations
    split : str
        Split label carried by the result

    Returns
    -------
    ImportanceVector
        Raw error increases; may be negative by chance
    """
    if repeats < 1:
        raise ExplainerError(f"repeats must be at least 1, got {repeats}")
    X = np.array(_check_inputs(m, X), copy=True)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise ExplainerError(f"Target shape {y.shape} does not match {X.shape[0]} rows")

    n, n_features = X.shape
    if n == 1:
        logger.warning("Permutation importance on a single row: every shuffle is the identity")
        return _vector(np.zeros(n_features), m, AttributionMethod.PI, split, ("single-row input",))

    rng = np.random.default_rng(seed)
    orders = [rng.permutation(n) for _ in range(repeats)]
    baseline = mean_squared_error(y, predict(m, X))

    importances = np.zeros(n_features)
    for i in range(n_features):
        original = X[:, i].copy()
        deltas = []
        for order in orders:
            X[:, i] = original[order]
            deltas.append(mean_squared_error(y, predict(m, X)) - baseline)
        X[:, i] = original
        importances[i] = np.mean(deltas)
    return _vector(importances, m, AttributionMethod.PI, split)


def shapley_weights(n_features: int) -> ShapleyWeights:
    """Weights 1 / (M * C(M-1, k)) for coalition sizes k = 0..M-1."""
    if n_features < 1:
        raise ExplainerError(f"Need at least one feature, got {n_features}")
    weights = np.array([1.0 / (n_features * math.comb(n_features - 1, k)) for k in range(n_features)])
    return ShapleyWeights(n_features, weights)


def background_from_data(X: np.ndarray) -> BackgroundSet:
    """Every row its own center with weight 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ExplainerError(f"Background data must be a non-empty matrix, got shape {X.shape}")
    return BackgroundSet(centers=X.copy(), weights=np.ones(X.shape[0]))


def kmeans_summarize(X: np.ndarray, k: int, seed: int = 0) -> BackgroundSet:
    """
    Summarize data by k-means centers weighted by cluster size.

    Parameters
    ----------
    X : numpy.ndarray
        (n, M) data
    k : int
        Number of clusters, 1 <= k <= n
    seed : int
        Seed of the k-means++ initialization

    Returns
    -------
    BackgroundSet
        Centers with weights equal to the number of rows they represent
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ExplainerError(f"Background data must be a non-empty matrix, got shape {X.shape}")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ExplainerError(f"k must lie in [1, {n}], got {k}")

    # sklearn compares the summed squared center shift against tol times the
    # mean feature variance
    spread = float(np.mean(np.var(X, axis=0)))
    tol = CENTER_SHIFT_TOL ** 2 / spread if spread > 0 else 0.0
    km = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=1,
        max_iter=100,
        tol=tol,
        random_state=int(seed) % (2 ** 32),
    ).fit(X)
    weights = np.bincount(km.labels_, minlength=k).astype(float)

    keep = weights > 0
    if not np.all(keep):
        logger.warning(f"Dropping {int((~keep).sum())} empty k-means clusters from the background")
    logger.debug(f"Summarized {n} rows into {int(keep.sum())} background centers")
    return BackgroundSet(centers=km.cluster_centers_[keep], weights=weights[keep])


def base_value(m: TrainedModel, bg: BackgroundSet) -> float:
    """Weighted mean prediction over the background, the value of the empty coalition."""
    return float(np.average(predict(m, bg.centers), weights=bg.weights))


def _coalition_values(m: TrainedModel, x: np.ndarray, bg: BackgroundSet, masks: np.ndarray) -> np.ndarray:
    """
    Value of each coalition for instance x.

    Features in a coalition take their value from x, the rest from each
    background center; predictions are averaged with the center weights.
    """
    n_centers = bg.size
    per_chunk = max(1, COALITION_CHUNK // n_centers)
    values = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], per_chunk):
        block = masks[start:start + per_chunk]
        hybrid = np.where(block[:, None, :], x[None, None, :], bg.centers[None, :, :])
        preds = predict(m, hybrid.reshape(-1, x.shape[0])).reshape(block.shape[0], n_centers)
        values[start:start + block.shape[0]] = preds @ bg.weights / bg.total_weight
    return values


def _check_background(m: TrainedModel, bg: BackgroundSet) -> None:
    if bg.centers.ndim != 2 or bg.centers.shape[1] != m.n_features:
        raise ExplainerError(f"Background has shape {bg.centers.shape}, model expects {m.n_features} features")
    if bg.weights.shape != (bg.size,) or np.any(bg.weights <= 0):
        raise ExplainerError("Background weights must be strictly positive, one per center")


def _exact_instance(m: TrainedModel, x: np.ndarray, bg: BackgroundSet, weights: ShapleyWeights) -> np.ndarray:
    n_features = x.shape[0]
    codes = np.arange(1 << n_features)
    masks = ((codes[:, None] >> np.arange(n_features)) & 1).astype(bool)
    sizes = masks.sum(axis=1)
    values = _coalition_values(m, x, bg, masks)

    phi = np.empty(n_features)
    for i in range(n_features):
        bit = 1 << i
        without = codes[(codes & bit) == 0]
        phi[i] = np.sum(weights.weights[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def _sampled_instance(m: TrainedModel, x: np.ndarray, bg: BackgroundSet, n_permutations: int,
                      rng: np.random.Generator) -> np.ndarray:
    n_features = x.shape[0]
    phi = np.zeros(n_features)
    per_chunk = max(1, COALITION_CHUNK // (bg.size * (n_features + 1)))
    remaining = n_permutations
    while remaining > 0:
        count = min(per_chunk, remaining)
        remaining -= count
        orders = np.stack([rng.permutation(n_features) for _ in range(count)])
        # Prefix masks: row j of a permutation holds its first j features
        position = np.empty_like(orders)
        np.put_along_axis(position, orders, np.arange(n_features)[None, :], axis=1)
        masks = position[:, None, :] < np.arange(n_features + 1)[None, :, None]
        values = _coalition_values(m, x, bg, masks.reshape(-1, n_features)).reshape(count, n_features + 1)
        contributions = np.diff(values, axis=1)
        np.add.at(phi, orders.reshape(-1), contributions.reshape(-1))
    return phi / n_permutations


def _redistribute(phi: np.ndarray, residual: float) -> np.ndarray:
    magnitude = np.abs(phi)
    total = magnitude.sum()
    if total > 0:
        return phi + residual * magnitude / total
    return phi + residual / phi.shape[0]


def shapley_values(
    m: TrainedModel,
    X_explain: np.ndarray,
    bg: BackgroundSet,
    exact: bool = True,
    n_permutations: int = 100,
    seed: int = 0,
    enforce_efficiency: bool = True,
    exact_limit: int = 12,
) -> np.ndarray:
    """
    Per-instance Shapley values against a weighted background.

    Parameters
    ----------
    m : TrainedModel
        Model to explain
    X_explain : numpy.ndarray
        (n, M) instances
    bg : BackgroundSet
        Reference points for absent features
    exact : bool
        Enumerate all 2^M coalitions if True, else sample permutations
    n_permutations : int
        Permutations per instance when sampling
    seed : int
        Seed of the permutation sampler
    enforce_efficiency : bool
        When sampling, spread the efficiency residual over the features
        in proportion to |phi|
    exact_limit : int
        Largest M accepted for exact enumeration

    Returns
    -------
    numpy.ndarray
        (n, M) attributions; each row sums to f(x) minus the background
        mean prediction
    """
    X_explain = _check_inputs(m, X_explain, "X_explain")
    _check_background(m, bg)
    n_features = X_explain.shape[1]

    if exact:
        if n_features > exact_limit:
            raise ExplainerError(
                f"Exact Shapley values over {n_features} features exceed the limit of {exact_limit}",
                "Too many features for exact Shapley values; use the sampled estimator."
            )
        weights = shapley_weights(n_features)
        with ResourceTracker(f"exact shapley {m.kind.label}"):
            return np.stack([_exact_instance(m, x, bg, weights) for x in X_explain])

    if n_permutations < 1:
        raise ExplainerError(f"n_permutations must be at least 1, got {n_permutations}")
    rng = np.random.default_rng(seed)
    with ResourceTracker(f"sampled shapley {m.kind.label}"):
        phi = np.stack([_sampled_instance(m, x, bg, n_permutations, rng) for x in X_explain])
    if enforce_efficiency:
        residual = predict(m, X_explain) - base_value(m, bg) - phi.sum(axis=1)
        phi = np.stack([_redistribute(row, r) for row, r in zip(phi, residual)])
    return phi


def exact_shapley(m: TrainedModel, X_explain: np.ndarray, bg: BackgroundSet,
                  exact_limit: int = 12, split: str = "train") -> ImportanceVector:
    """Mean absolute exact Shapley value of every feature over X_explain."""
    phi = shapley_values(m, X_explain, bg, exact=True, exact_limit=exact_limit)
    return _vector(np.abs(phi).mean(axis=0), m, AttributionMethod.SHAP, split)


def sampled_shapley(m: TrainedModel, X_explain: np.ndarray, bg: BackgroundSet, n_permutations: int = 100,
                    seed: int = 0, enforce_efficiency: bool = True, split: str = "train") -> ImportanceVector:
    """Mean absolute permutation-sampled Shapley value of every feature over X_explain."""
    phi = shapley_values(m, X_explain, bg, exact=False, n_permutations=n_permutations,
                         seed=seed, enforce_efficiency=enforce_efficiency)
    return _vector(np.abs(phi).mean(axis=0), m, AttributionMethod.SHAP, split)


def _require_gradient(m: TrainedModel) -> None:
    if not m.supports_input_gradient or m.network is None:
        raise ExplainerError(
            f"Integrated Gradients needs a differentiable model, got {m.kind.label}",
            "Integrated Gradients is only available for the neural network model."
        )


def _integrated_gradients_batch(m: TrainedModel, X: np.ndarray, b: Baseline, steps: int) -> np.ndarray:
    _require_gradient(m)
    if steps < 1:
        raise ExplainerError(f"steps must be at least 1, got {steps}")
    baseline = np.asarray(b.values, dtype=np.float64)
    if baseline.shape != (m.n_features,):
        raise ExplainerError(f"Baseline has shape {baseline.shape}, model expects {m.n_features} features")
    check_finite("baseline", baseline, ExplainerError)

    inputs = torch.tensor(X, dtype=torch.float64)
    baselines = torch.tensor(np.broadcast_to(baseline, X.shape).copy(), dtype=torch.float64)
    if steps == 1:
        # Single midpoint evaluation; the Riemann builders need two nodes
        midpoint = (0.5 * (inputs + baselines)).requires_grad_(True)
        (grad,) = torch.autograd.grad(m.network(midpoint).sum(), midpoint)
        return ((inputs - baselines) * grad).numpy()

    ig = IntegratedGradients(m.network)
    attributions = ig.attribute(
        inputs,
        baselines=baselines,
        target=0,
        n_steps=steps,
        method="riemann_middle",
    )
    return attributions.detach().numpy()


def integrated_gradients(m: TrainedModel, x: np.ndarray, b: Optional[Baseline] = None,
                         steps: int = 100) -> np.ndarray:
    """
    Integrated Gradients of one instance by the midpoint Riemann rule.

    IG_i = (x_i - b_i) * mean over t of df/dx_i at b + ((t - 0.5) / steps)(x - b).

    Parameters
    ----------
    m : TrainedModel
        Differentiable model
    x : numpy.ndarray
        (M,) instance
    b : Baseline, optional
        Reference input, zeros if None
    steps : int
        Number of midpoint nodes

    Returns
    -------
    numpy.ndarray
        (M,) attributions
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ExplainerError(f"Expected a single row, got shape {x.shape}")
    _check_inputs(m, x.reshape(1, -1), "x")
    if b is None:
        b = Baseline.zeros(m.n_features)
    return _integrated_gradients_batch(m, x.reshape(1, -1), b, steps)[0]


def global_ig(m: TrainedModel, X_explain: np.ndarray, b: Optional[Baseline] = None, steps: int = 100,
              split: str = "train") -> ImportanceVector:
    """Mean absolute Integrated Gradients attribution over the rows of X_explain."""
    X_explain = _check_inputs(m, X_explain, "X_explain")
    if b is None:
        b = Baseline.zeros(m.n_features)
    with ResourceTracker(f"integrated gradients {m.kind.label}"):
        attributions = _integrated_gradients_batch(m, X_explain, b, steps)
    return _vector(np.abs(attributions).mean(axis=0), m, AttributionMethod.IG, split)


def build_background(X_train: np.ndarray, config: ExplainerConfig, seed: int = 0) -> BackgroundSet:
    """Background for Shapley values: k-means summary or the raw rows, per config."""
    if not config.summarize_background:
        return background_from_data(X_train)
    k = min(config.background_k, np.asarray(X_train).shape[0])
    return kmeans_summarize(X_train, k, seed)


def explain(
    m: TrainedModel,
    method: AttributionMethod,
    X: np.ndarray,
    y: np.ndarray,
    bg: Optional[BackgroundSet] = None,
    config: Optional[ExplainerConfig] = None,
    seed: int = 0,
    split: str = "train",
    force_exact: bool = False,
) -> ImportanceVector:
    """
    Compute one global importance vector with settings from ``config``.

    SHAP enumerates coalitions exactly while M is within
    ``config.exact_limit`` and samples permutations beyond it, unless
    ``force_exact`` is set. SHAP and IG explain the first
    ``config.explain_rows`` rows of X.
    """
    config = config or ExplainerConfig()
    method = AttributionMethod(method)
    if method not in applicable_methods(m.kind):
        raise ExplainerError(
            f"{method.value} does not apply to {m.kind.label} models",
            f"The {method.value} method is not available for the {m.kind.label} model."
        )
    if method is AttributionMethod.PI:
        return permutation_importance(m, X, y, repeats=config.pi_repeats, seed=seed, split=split)

    rows = np.asarray(X, dtype=float)[: max(1, config.explain_rows)]
    if method is AttributionMethod.IG:
        return global_ig(m, rows, Baseline.zeros(m.n_features), steps=config.ig_steps, split=split)

    if bg is None:
        raise ExplainerError("SHAP needs a background set")
    if force_exact or rows.shape[1] <= config.exact_limit:
        return exact_shapley(m, rows, bg, exact_limit=config.exact_limit, split=split)
    return sampled_shapley(m, rows, bg, n_permutations=config.shap_permutations, seed=seed,
                           enforce_efficiency=config.enforce_efficiency, split=split)


def vectors_for_model(m: TrainedModel, X: np.ndarray, y: np.ndarray, bg: BackgroundSet,
                      config: ExplainerConfig, seed: int, split: str,
                      methods: Optional[Sequence[AttributionMethod]] = None) -> List[ImportanceVector]:
    """Every applicable attribution of one model on one split, in method order."""
    chosen = methods or applicable_methods(m.kind)
    return [explain(m, method, X, y, bg, config, seed, split) for method in chosen]
