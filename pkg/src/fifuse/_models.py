"""
Model zoo for fifuse.

Four regressors are trained on the same split of a dataset: a random
forest and gradient-boosted trees (scikit-learn), a linear support vector
regressor trained by stochastic subgradient descent on the
epsilon-insensitive loss, and a fully connected network (torch, ReLU by
default) whose input gradients feed Integrated Gradients.
"""

from typing import Any, Callable, Dict, Optional, Tuple, Union
from dataclasses import dataclass, asdict, field
from enum import Enum
from pathlib import Path
import logging

import numpy as np
import torch
from torch import nn
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import SGDRegressor
from sklearn.metrics import r2_score

from ._resources import ResourceTracker
from ._utils import ModelError, PathLike, TrainingError, write_json

logger = logging.getLogger(__name__)

# Rows per forward pass when a network predicts on large coalition batches
PREDICT_CHUNK = 65536

SCALE_PROFILES = ("full", "desk")
PROFILE_ALIASES = {"paper": "full"}
PROFILE_CHOICES = SCALE_PROFILES + tuple(PROFILE_ALIASES)

ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh}


def resolve_profile(profile: str) -> str:
    """Canonical name of a scale profile; ``paper`` is an alias of ``full``."""
    return PROFILE_ALIASES.get(profile, profile)


class ModelKind(str, Enum):
    RANDOM_FOREST = "rf"
    GRADIENT_BOOSTED_TREES = "gbt"
    LINEAR_SVR = "svr"
    DEEP_NEURAL_NETWORK = "dnn"

    @property
    def label(self) -> str:
        return self.value


@dataclass
class ForestParams:
    n_trees: int = 700
    max_depth: Optional[int] = 7
    min_samples_split: int = 2
    max_features: str = "sqrt"
    bootstrap: bool = True

    def validate(self) -> None:
        _require_positive("n_trees", self.n_trees)
        if self.max_depth is not None:
            _require_positive("max_depth", self.max_depth)
        if self.min_samples_split < 2:
            raise TrainingError(f"min_samples_split must be at least 2, got {self.min_samples_split}")


@dataclass
class BoostingParams:
    n_trees: int = 700
    learning_rate: float = 0.1
    max_depth: int = 7
    max_features: str = "sqrt"
    criterion: str = "friedman_mse"
    loss: str = "squared_error"

    def validate(self) -> None:
        _require_positive("n_trees", self.n_trees)
        _require_positive("max_depth", self.max_depth)
        # Zero shrinkage is allowed and leaves the initial constant estimate
        if not self.learning_rate >= 0.0:
            raise TrainingError(f"learning_rate must be non-negative, got {self.learning_rate}")


@dataclass
class SVRParams:
    C: float = 2048.0
    epsilon: float = 0.5
    max_iter: int = 2000
    eta0: float = 0.1

    def validate(self) -> None:
        _require_positive("C", self.C)
        _require_positive("max_iter", self.max_iter)
        _require_positive("eta0", self.eta0)
        if not self.epsilon >= 0.0:
            raise TrainingError(f"epsilon must be non-negative, got {self.epsilon}")


@dataclass
class NetworkParams:
    widths: Tuple[int, ...] = (64, 64, 32, 16, 8, 6, 4, 1)
    learning_rate: float = 0.001
    l2: float = 0.001
    dropout: float = 0.2
    epochs: int = 300
    batch_size: int = 32
    activation: str = "relu"

    def validate(self) -> None:
        if not self.widths or any(w < 1 for w in self.widths):
            raise TrainingError(f"Layer widths must be positive, got {self.widths}")
        if self.widths[-1] != 1:
            raise TrainingError(f"The output layer must have width 1, got {self.widths[-1]}")
        _require_positive("learning_rate", self.learning_rate)
        _require_positive("epochs", self.epochs)
        _require_positive("batch_size", self.batch_size)
        if not self.l2 >= 0.0:
            raise TrainingError(f"l2 must be non-negative, got {self.l2}")
        if not 0.0 <= self.dropout < 1.0:
            raise TrainingError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.activation not in ACTIVATIONS:
            raise TrainingError(f"activation must be one of {sorted(ACTIVATIONS)}, got '{self.activation}'")


Hyperparams = Union[ForestParams, BoostingParams, SVRParams, NetworkParams]

_PARAM_TYPES = {
    ModelKind.RANDOM_FOREST: ForestParams,
    ModelKind.GRADIENT_BOOSTED_TREES: BoostingParams,
    ModelKind.LINEAR_SVR: SVRParams,
    ModelKind.DEEP_NEURAL_NETWORK: NetworkParams,
}


def _require_positive(name: str, value: float) -> None:
    if not value > 0:
        raise TrainingError(f"{name} must be positive, got {value}")


def default_hyperparams(kind: ModelKind, profile: str = "full") -> Hyperparams:
    """
    Hyperparameters for a model kind under a scale profile.

    ``full`` uses 700 trees and 300 network epochs with batch size 32.
    ``desk`` shrinks the ensembles to 100 trees and trains the network for
    100 epochs with batch size 64; everything else is shared.
    """
    profile = resolve_profile(profile)
    if profile not in SCALE_PROFILES:
        raise TrainingError(f"Unknown scale profile '{profile}'", f"Use one of {', '.join(SCALE_PROFILES)}.")
    kind = ModelKind(kind)
    params = _PARAM_TYPES[kind]()
    if profile == "desk":
        if isinstance(params, (ForestParams, BoostingParams)):
            params.n_trees = 100
        elif isinstance(params, NetworkParams):
            params.epochs = 100
            params.batch_size = 64
    return params


@dataclass(frozen=True)
class TrainedModel:
    """
    A fitted regressor.

    ``predictor`` maps an (n, M) array to n predictions. ``network`` is the
    torch module behind differentiable models and None otherwise.
    """
    kind: ModelKind
    predictor: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    hyperparams: Dict[str, Any]
    n_features: int
    supports_input_gradient: bool = False
    network: Optional[nn.Module] = field(default=None, repr=False)
    estimator: Any = field(default=None, repr=False)


def _torch_seed(seed: int) -> int:
    return int(seed) % (2 ** 63)


def _sklearn_seed(seed: int) -> int:
    return int(seed) % (2 ** 32)


def _as_matrix(X: np.ndarray) -> np.ndarray:
    return np.array(X, dtype=np.float64, copy=True)


def _validate_training_data(X: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise TrainingError(f"Training features must be a non-empty matrix, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise TrainingError(
            f"Target length {y.shape} does not match {X.shape[0]} feature rows",
            "Features and target have different numbers of rows."
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise TrainingError("Training data contains NaN or infinite values", "Remove non-finite values before training.")
    if np.ptp(y) == 0.0:
        raise TrainingError(
            f"Target is constant ({y[0]}); there is nothing to learn",
            "The target has zero variance, so no model can be trained on it."
        )
    return X, y


class _TargetScale(nn.Module):
    """Maps standardized network outputs back to target units."""

    def __init__(self, mean: float, std: float):
        super().__init__()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float64))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float64))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.std + self.mean


def build_network(n_features: int, widths: Tuple[int, ...], dropout: float,
                  activation: str = "relu") -> nn.Sequential:
    """Linear -> activation -> Dropout blocks ending in a linear output layer."""
    layers = []
    fan_in = n_features
    for width in widths[:-1]:
        layers += [nn.Linear(fan_in, width), ACTIVATIONS[activation](), nn.Dropout(dropout)]
        fan_in = width
    layers.append(nn.Linear(fan_in, widths[-1]))
    network = nn.Sequential(*layers).double()
    for module in network:
        if isinstance(module, nn.Linear):
            nn.init.kaiming_uniform_(module.weight, nonlinearity=activation)
            nn.init.zeros_(module.bias)
    return network


def _network_predictor(network: nn.Module) -> Callable[[np.ndarray], np.ndarray]:
    def predict(X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        with torch.no_grad():
            for start in range(0, X.shape[0], PREDICT_CHUNK):
                batch = torch.tensor(X[start:start + PREDICT_CHUNK], dtype=torch.float64)
                out[start:start + batch.shape[0]] = network(batch).reshape(-1).numpy()
        return out
    return predict


def _freeze(network: nn.Module) -> nn.Module:
    network.eval()
    for parameter in network.parameters():
        parameter.requires_grad_(False)
    return network


def _train_forest(X, y, params: ForestParams, seed: int) -> TrainedModel:
    estimator = RandomForestRegressor(
        n_estimators=params.n_trees,
        max_depth=params.max_depth,
        min_samples_split=params.min_samples_split,
        max_features=params.max_features,
        bootstrap=params.bootstrap,
        random_state=_sklearn_seed(seed),
        n_jobs=1,
    )
    estimator.fit(X, y)
    return TrainedModel(
        kind=ModelKind.RANDOM_FOREST,
        predictor=estimator.predict,
        hyperparams=asdict(params),
        n_features=X.shape[1],
        estimator=estimator,
    )


def _train_boosting(X, y, params: BoostingParams, seed: int) -> TrainedModel:
    estimator = GradientBoostingRegressor(
        n_estimators=params.n_trees,
        learning_rate=params.learning_rate,
        max_depth=params.max_depth,
        max_features=params.max_features,
        criterion=params.criterion,
        loss=params.loss,
        random_state=_sklearn_seed(seed),
    )
    estimator.fit(X, y)
    return TrainedModel(
        kind=ModelKind.GRADIENT_BOOSTED_TREES,
        predictor=estimator.predict,
        hyperparams=asdict(params),
        n_features=X.shape[1],
        estimator=estimator,
    )


def _train_svr(X, y, params: SVRParams, seed: int) -> TrainedModel:
    # L2 penalty 1/(2C) on the summed loss equals alpha/2 on the mean loss
    estimator = SGDRegressor(
        loss="epsilon_insensitive",
        epsilon=params.epsilon,
        penalty="l2",
        alpha=1.0 / (params.C * X.shape[0]),
        learning_rate="invscaling",
        eta0=params.eta0,
        max_iter=params.max_iter,
        tol=None,
        shuffle=True,
        random_state=_sklearn_seed(seed),
    )
    estimator.fit(X, y)
    return TrainedModel(
        kind=ModelKind.LINEAR_SVR,
        predictor=estimator.predict,
        hyperparams=asdict(params),
        n_features=X.shape[1],
        estimator=estimator,
    )


def _train_network(X, y, params: NetworkParams, seed: int) -> TrainedModel:
    n, m = X.shape
    y_mean = float(y.mean())
    y_std = float(y.std())

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(_torch_seed(seed))
        generator = torch.Generator().manual_seed(_torch_seed(seed) ^ 0x5EED)

        core = build_network(m, tuple(params.widths), params.dropout, params.activation)
        optimizer = torch.optim.Adam(core.parameters(), lr=params.learning_rate)
        kernels = [layer.weight for layer in core if isinstance(layer, nn.Linear)]

        X_t = torch.as_tensor(_as_matrix(X))
        y_t = torch.as_tensor((y - y_mean) / y_std, dtype=torch.float64)

        core.train()
        for epoch in range(params.epochs):
            order = torch.randperm(n, generator=generator)
            for start in range(0, n, params.batch_size):
                batch = order[start:start + params.batch_size]
                optimizer.zero_grad()
                residual = core(X_t[batch]).reshape(-1) - y_t[batch]
                loss = residual.pow(2).mean()
                if params.l2 > 0:
                    loss = loss + params.l2 * sum(w.pow(2).sum() for w in kernels)
                loss.backward()
                optimizer.step()
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Network loss diverged at epoch {epoch}",
                    "Neural network training diverged; try a smaller learning rate."
                )

    network = _freeze(nn.Sequential(core, _TargetScale(y_mean, y_std)))
    return TrainedModel(
        kind=ModelKind.DEEP_NEURAL_NETWORK,
        predictor=_network_predictor(network),
        hyperparams=asdict(params),
        n_features=m,
        supports_input_gradient=True,
        network=network,
    )


_TRAINERS = {
    ModelKind.RANDOM_FOREST: _train_forest,
    ModelKind.GRADIENT_BOOSTED_TREES: _train_boosting,
    ModelKind.LINEAR_SVR: _train_svr,
    ModelKind.DEEP_NEURAL_NETWORK: _train_network,
}


def train(
    kind: ModelKind,
    X: np.ndarray,
    y: np.ndarray,
    hp: Optional[Hyperparams] = None,
    seed: int = 0,
) -> TrainedModel:
    """
    Train one model of the zoo.

    Parameters
    ----------
    kind : ModelKind
        Which regressor to fit
    X : numpy.ndarray
        (n, M) training features
    y : numpy.ndarray
        n training targets
    hp : Hyperparams, optional
        Hyperparameters matching ``kind``; full-scale defaults if None
    seed : int
        Seed; equal seeds give identical models

    Returns
    -------
    TrainedModel
        Immutable fitted model

    Raises
    ------
    TrainingError
        On invalid data, a constant target, or hyperparameters of the
        wrong kind
    """
    kind = ModelKind(kind)
    X, y = _validate_training_data(X, y)
    if hp is None:
        hp = default_hyperparams(kind)
    expected = _PARAM_TYPES[kind]
    if not isinstance(hp, expected):
        raise TrainingError(f"{kind.label} expects {expected.__name__}, got {type(hp).__name__}")
    hp.validate()

    with ResourceTracker(f"train {kind.label}"):
        model = _TRAINERS[kind](X, y, hp, seed)
    logger.info(f"Trained {kind.label} on {X.shape[0]} rows x {X.shape[1]} features (seed {seed})")
    return model


def wrap_network(network: nn.Module, n_features: int) -> TrainedModel:
    """
    Wrap a differentiable torch module mapping (n, M) float64 inputs to
    (n, 1) outputs as a network-kind model, e.g. a hand-built linear layer.
    """
    network = _freeze(network.double())
    return TrainedModel(
        kind=ModelKind.DEEP_NEURAL_NETWORK,
        predictor=_network_predictor(network),
        hyperparams={},
        n_features=n_features,
        supports_input_gradient=True,
        network=network,
    )


def wrap_predictor(predictor: Callable[[np.ndarray], np.ndarray], n_features: int,
                   kind: ModelKind = ModelKind.RANDOM_FOREST) -> TrainedModel:
    """Wrap a plain prediction function; useful for model-agnostic explainers."""
    return TrainedModel(kind=ModelKind(kind), predictor=predictor, hyperparams={}, n_features=n_features)


def predict(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    """
    Predict targets for the rows of X.

    Raises
    ------
    ModelError
        If X does not have the training width or predictions are not finite
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ModelError(
            f"{m.kind.label} was trained on {m.n_features} features, got input of shape {X.shape}",
            "The input has the wrong number of features for this model."
        )
    out = np.asarray(m.predictor(X), dtype=float).reshape(-1)
    if not np.all(np.isfinite(out)):
        raise ModelError(f"{m.kind.label} produced non-finite predictions")
    return out


def input_gradient(m: TrainedModel, x: np.ndarray) -> np.ndarray:
    """
    Gradient of the prediction with respect to the input, by backpropagation.

    Parameters
    ----------
    m : TrainedModel
        Differentiable model
    x : numpy.ndarray
        One row (M,) or a batch (n, M)

    Returns
    -------
    numpy.ndarray
        Same shape as ``x``
    """
    if not m.supports_input_gradient or m.network is None:
        raise ModelError(
            f"{m.kind.label} models have no input gradient",
            "Gradient-based attribution needs the neural network model."
        )
    x = np.asarray(x, dtype=np.float64)
    batch = x.reshape(1, -1) if x.ndim == 1 else x
    if batch.shape[1] != m.n_features:
        raise ModelError(f"Expected {m.n_features} features, got input of shape {x.shape}")

    inputs = torch.tensor(batch, dtype=torch.float64, requires_grad=True)
    outputs = m.network(inputs).sum()
    (grad,) = torch.autograd.grad(outputs, inputs)
    return grad.numpy().reshape(x.shape)


def score_fit(m: TrainedModel, X: np.ndarray, y: np.ndarray) -> float:
    """R^2 of the model's predictions on (X, y)."""
    return float(r2_score(np.asarray(y, dtype=float), predict(m, X)))


def _tree_to_dict(tree) -> Dict[str, Any]:
    t = tree.tree_
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "children_left": t.children_left.tolist(),
        "children_right": t.children_right.tolist(),
        "value": t.value.reshape(-1).tolist(),
    }


def model_to_dict(m: TrainedModel) -> Dict[str, Any]:
    """
    Self-describing JSON-compatible description of a model.

    Trees are flattened to their node arrays, the linear SVR to its
    coefficients and the network to its named parameter tensors.
    """
    if m.kind is ModelKind.RANDOM_FOREST:
        parameters = {"trees": [_tree_to_dict(t) for t in m.estimator.estimators_]}
    elif m.kind is ModelKind.GRADIENT_BOOSTED_TREES:
        parameters = {
            "init": float(np.ravel(m.estimator.init_.constant_)[0]),
            "learning_rate": float(m.estimator.learning_rate),
            "trees": [_tree_to_dict(t) for t in m.estimator.estimators_[:, 0]],
        }
    elif m.kind is ModelKind.LINEAR_SVR:
        parameters = {
            "coef": m.estimator.coef_.tolist(),
            "intercept": float(np.ravel(m.estimator.intercept_)[0]),
        }
    elif m.network is not None:
        parameters = {
            name: {"shape": list(tensor.shape), "data": tensor.reshape(-1).tolist()}
            for name, tensor in m.network.state_dict().items()
        }
    else:
        raise ModelError(f"Cannot serialize a wrapped {m.kind.label} predictor")

    hyperparams = {k: list(v) if isinstance(v, tuple) else v for k, v in m.hyperparams.items()}
    return {
        "kind": m.kind.value,
        "n_features": m.n_features,
        "hyperparams": hyperparams,
        "parameters": parameters,
    }


def save_model(m: TrainedModel, path: PathLike) -> Path:
    return write_json(path, model_to_dict(m))
