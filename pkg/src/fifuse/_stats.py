"""
Statistical primitives for fusion strategies.

Ranking with average ties, Kendall tau-b and Spearman rho with two-sided
p-values, the Student-t CDF and the Modified Thompson Tau threshold.
"""

from typing import Sequence, Union
from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy import special, stats

from ._utils import StatsError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class CorrelationResult:
    coefficient: float
    p_value: float
    n: int
    degenerate: bool = False


def rank_descending(values: ArrayLike) -> np.ndarray:
    """
    Rank a vector so that the largest value gets rank 1.

    Parameters
    ----------
    values : array-like
        Finite values

    Returns
    -------
    numpy.ndarray
        Ranks; tied values share the average of the ranks they cover
    """
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise StatsError("Cannot rank non-finite values")
    return stats.rankdata(-v, method="average")


def _paired(a: ArrayLike, b: ArrayLike):
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError(f"Correlation needs equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise StatsError(f"Correlation needs at least 3 observations, got {x.size}")
    return x, y


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def kendall_tau(a: ArrayLike, b: ArrayLike) -> CorrelationResult:
    """
    Kendall tau-b with a normal-approximation two-sided p-value.

    The p-value uses the no-ties null variance 2(2n+5) / (9n(n-1)) of tau.
    Constant inputs leave tau undefined; they return coefficient 0,
    p-value 1 and ``degenerate=True``.
    """
    x, y = _paired(a, b)
    n = x.size
    if _is_constant(x) or _is_constant(y):
        logger.debug("Kendall tau on a constant vector, reporting degenerate result")
        return CorrelationResult(0.0, 1.0, n, degenerate=True)

    tau = float(stats.kendalltau(x, y, variant="b")[0])
    tau = min(1.0, max(-1.0, tau))
    variance = 2.0 * (2 * n + 5) / (9.0 * n * (n - 1))
    z = tau / math.sqrt(variance)
    p_value = float(min(1.0, 2.0 * stats.norm.sf(abs(z))))
    return CorrelationResult(tau, p_value, n)


def spearman_rho(a: ArrayLike, b: ArrayLike) -> CorrelationResult:
    """
    Spearman rho (Pearson correlation of average ranks).

    The two-sided p-value comes from t = r * sqrt((n-2) / (1-r^2)) on n-2
    degrees of freedom. Constant inputs are degenerate as in
    :func:`kendall_tau`.
    """
    x, y = _paired(a, b)
    n = x.size
    if _is_constant(x) or _is_constant(y):
        logger.debug("Spearman rho on a constant vector, reporting degenerate result")
        return CorrelationResult(0.0, 1.0, n, degenerate=True)

    rho = float(np.corrcoef(stats.rankdata(x), stats.rankdata(y))[0, 1])
    if abs(rho) >= 1.0 - 1e-12:
        return CorrelationResult(math.copysign(1.0, rho), 0.0, n)
    t_stat = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p_value = 2.0 * (1.0 - t_cdf(abs(t_stat), n - 2))
    return CorrelationResult(rho, float(min(1.0, max(0.0, p_value))), n)


def t_cdf(x: float, df: float) -> float:
    """
    Student-t cumulative distribution function.

    Parameters
    ----------
    x : float
        Evaluation point
    df : float
        Degrees of freedom, positive

    Returns
    -------
    float
        P(T <= x), computed through the regularized incomplete beta function
    """
    if df <= 0:
        raise StatsError(f"Degrees of freedom must be positive, got {df}")
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    tail = 0.5 * float(special.betainc(df / 2.0, 0.5, df / (df + x * x)))
    return 1.0 - tail if x > 0 else tail


def t_critical(upper_tail: float, df: float) -> float:
    """Value t with P(T > t) = upper_tail."""
    return float(stats.t.isf(upper_tail, df))


def thompson_tau_threshold(n: int, alpha: float = 0.05) -> float:
    """
    Modified Thompson Tau rejection threshold for a sample of size n.

    tau = t (n-1) / (sqrt(n) sqrt(n-2+t^2)) with t the upper alpha/2
    critical value on n-2 degrees of freedom. A point whose absolute
    deviation from the mean exceeds tau * s is an outlier.
    """
    if n < 3:
        raise StatsError(f"Thompson tau needs n >= 3, got {n}")
    if not 0.0 < alpha < 1.0:
        raise StatsError(f"alpha must lie in (0, 1), got {alpha}")
    t = t_critical(alpha / 2.0, n - 2)
    return t * (n - 1) / (math.sqrt(n) * math.sqrt(n - 2 + t * t))
