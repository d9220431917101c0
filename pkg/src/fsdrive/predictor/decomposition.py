"""Multi-kernel moving-average trend/remainder decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["Decomposition", "moving_average", "decompose"]


@dataclass(frozen=True)
class Decomposition:
    trend: np.ndarray
    remainder: np.ndarray


def moving_average(series: np.ndarray, k: int) -> np.ndarray:
    """Length-preserving window mean with replicate padding of (k-1)/2.

    ``series`` is (T,) or (T, F); ``k`` must be odd and within 3..T.
    """
    x = np.asarray(series, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    t = x.shape[0]
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if not 3 <= k <= t:
        raise ValueError(f"kernel size {k} outside 3..{t}")
    pad = (k - 1) // 2
    padded = np.concatenate([np.repeat(x[:1], pad, axis=0), x, np.repeat(x[-1:], pad, axis=0)])
    kernel = np.ones(k) / k
    out = np.column_stack(
        [np.convolve(padded[:, j], kernel, mode="valid") for j in range(x.shape[1])]
    )
    return out[:, 0] if squeeze else out


def decompose(series: np.ndarray, kernels: Sequence[int]) -> Decomposition:
    """Trend = mean of the per-kernel moving averages; remainder = series - trend."""
    if not kernels:
        raise ValueError("at least one kernel size required")
    x = np.asarray(series, dtype=float)
    trend = np.mean([moving_average(x, k) for k in kernels], axis=0)
    return Decomposition(trend=trend, remainder=x - trend)
