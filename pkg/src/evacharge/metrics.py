"""Episode risk metrics, arrival forecast deviation and the Gini coefficient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RiskMetrics:
    are: float
    psre: float
    asre_l: float


def risk_metrics(
    queue: np.ndarray,
    risk: np.ndarray,
    n_evac: int,
    step_min: float = 5.0,
    late_window_h: float = 12.0,
) -> RiskMetrics:
    """ARE, PSRE and ASRE-L from (T, F) queue and risk traces.

    ARE weights each step by its length in hours; the late window is the last
    ``late_window_h`` hours of the trace.
    """
    if n_evac <= 0:
        raise ValueError("n_evac must be positive")
    q = np.asarray(queue, dtype=np.float64)
    r = np.asarray(risk, dtype=np.float64)
    if q.shape != r.shape:
        raise GridMismatch(f"queue {q.shape} vs risk {r.shape}")
    rq = r * q
    if rq.size == 0:
        return RiskMetrics(0.0, 0.0, 0.0)
    are = float(rq.sum() * (step_min / 60.0) / n_evac)
    psre = float(rq.max())
    n_late = int(round(late_window_h * 60.0 / step_min))
    late = rq[-n_late:] if n_late > 0 else rq[:0]
    pos = late > 0
    asre = float(late[pos].sum() / pos.sum()) if pos.any() else 0.0
    return RiskMetrics(are, psre, asre)


def gini(values) -> float:
    """Sorted-cumulative Gini: sum_i (2i - n - 1) x_(i) / (n * sum x); 0 for all-equal or all-zero input."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0 or x.sum() == 0.0 or x[0] == x[-1]:
        return 0.0
    if (x < 0).any():
        raise ValueError("Gini needs non-negative values")
    i = np.arange(1, n + 1)
    # rounding can leave a tiny negative value for nearly equal inputs
    return max(0.0, float(((2 * i - n - 1) * x).sum() / (n * x.sum())))


@dataclass(frozen=True)
class AfdReport:
    per_station: np.ndarray
    mean: float
    gini: float


def afd_report(real, predicted) -> AfdReport:
    """Mean absolute arrival deviation per station over H intervals; ``real``/``predicted`` are (H, F)."""
    a = np.asarray(real, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise GridMismatch(f"real {a.shape} vs predicted {p.shape}")
    if a.ndim == 1:
        a, p = a[:, None], p[:, None]
    if a.shape[0] == 0:
        raise GridMismatch("empty interval grid")
    afd = np.abs(a - p).mean(axis=0)
    return AfdReport(afd, float(afd.mean()), gini(afd))


def summarize(values) -> tuple[float, float]:
    """Mean and standard error across seeds."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))
