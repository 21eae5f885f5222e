"""Learning-curve metrics: trailing smoothing, AUC and bootstrap intervals."""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import InsufficientData

BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_SEED = 0


def smooth(series, window: int = 50) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` entries average the available prefix."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(series, dtype=float)
    if window == 1 or x.size == 0:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def auc(curve) -> float:
    """Trapezoidal area under a per-episode curve on a unit-spaced axis, divided by 1e3."""
    y = np.asarray(curve, dtype=float)
    if y.size == 0:
        raise ValueError("curve must be nonempty")
    return float(np.trapezoid(y)) / 1e3


def ci95(values, statistic: str = "mean", seed: int = BOOTSTRAP_SEED,
         resamples: int = BOOTSTRAP_RESAMPLES) -> tuple[float, float]:
    """Percentile-bootstrap 95% interval of the mean (or ``"std"``) of ``values``.

    The interval is widened if needed so that it contains the point estimate.
    """
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientData(f"need at least 2 values, got {x.size}")
    fn = {"mean": np.mean, "std": np.std}[statistic]
    point = float(fn(x))
    if np.all(x == x[0]):
        return point, point
    res = stats.bootstrap((x,), fn, n_resamples=resamples, confidence_level=0.95,
                          method="percentile", vectorized=True,
                          rng=np.random.default_rng(seed))
    lo, hi = float(res.confidence_interval.low), float(res.confidence_interval.high)
    return min(lo, point), max(hi, point)


def window_mean(series, n: int = 50, final: bool = True) -> float:
    """Mean over the last (or first) ``n`` entries."""
    x = np.asarray(series, dtype=float)
    return float(np.mean(x[-n:] if final else x[:n]))
