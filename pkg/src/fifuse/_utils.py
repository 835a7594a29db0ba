"""
Shared utilities for fifuse.

This module holds the exception hierarchy, seed derivation, simplex
normalization and the small file helpers used by the dataset, fusion and
reporting modules.
"""

from typing import Any, Dict, List, Optional, Tuple, Union
from pathlib import Path
import hashlib
import json
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class FifuseError(Exception):
    def __init__(self, message: str, user_message: Optional[str] = None):
        self.message = message
        self.user_message = user_message or message
        super().__init__(message)


class DataConfigError(FifuseError):
    pass


class ModelError(FifuseError):
    pass


class TrainingError(ModelError):
    pass


class ExplainerError(FifuseError):
    pass


class FusionError(FifuseError):
    pass


class StatsError(FifuseError):
    pass


class ExperimentError(FifuseError):
    pass


class ReportIOError(FifuseError):
    pass


def derive_seed(*parts: Any) -> int:
    """
    Derive a 64-bit seed from an ordered tuple of labels.

    Parameters
    ----------
    *parts
        Values identifying the consumer (base seed, factor levels, names).
        Their ``repr`` is hashed, so floats and strings are both fine.

    Returns
    -------
    int
        Unsigned 64-bit seed, stable across processes and platforms
    """
    text = "|".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def l1_normalize(values: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Map a vector onto the simplex through its absolute values.

    Parameters
    ----------
    values : numpy.ndarray
        Raw vector, may contain negative entries

    Returns
    -------
    tuple of (numpy.ndarray, bool)
        Normalized vector and a flag that is True when the input was all
        zeros and the uniform vector was returned instead
    """
    magnitude = np.abs(np.asarray(values, dtype=float))
    total = magnitude.sum()
    if total <= 0.0:
        return np.full(magnitude.shape, 1.0 / magnitude.size), True
    return magnitude / total, False


def check_finite(name: str, array: np.ndarray, error_cls=FifuseError) -> None:
    if not np.all(np.isfinite(array)):
        raise error_cls(
            f"{name} contains non-finite values",
            f"Input '{name}' has NaN or infinite entries."
        )


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def clean_nan(value: Any) -> Any:
    """Replace NaN floats by None, recursively, so JSON output stays strict."""
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {k: clean_nan(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean_nan(v) for v in value]
    return value


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """
    Write a JSON document, surfacing I/O failures with the path.

    Parameters
    ----------
    path : str or Path
        Destination file
    payload : dict
        JSON-compatible mapping; numpy scalars and arrays are converted

    Returns
    -------
    Path
        The written path

    Raises
    ------
    ReportIOError
        If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(clean_nan(payload), f, indent=2, default=_json_default, allow_nan=False)
    except (OSError, TypeError, ValueError) as e:
        logger.error(f"Failed to write {path}: {e}")
        raise ReportIOError(
            f"Cannot write JSON file {path}: {e}",
            f"Could not write {path}. Please check the destination."
        )
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ReportIOError(
            f"File not found: {path}",
            f"{path} could not be found. Please check the file path."
        )
    except json.JSONDecodeError as e:
        raise ReportIOError(
            f"Invalid JSON in {path}: {e}",
            f"{path} is not valid JSON."
        )
    except OSError as e:
        raise ReportIOError(f"Cannot read {path}: {e}", f"Could not read {path}.")


def feature_columns(n_features: int) -> List[str]:
    return [f"f{i}" for i in range(n_features)]
