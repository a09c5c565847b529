"""Weighted summaries over cells."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def weighted_quantile(values: Sequence[float], weights: Sequence[float], q: float) -> float:
    """Smallest value whose cumulative weight reaches q of the total.

    Zero-weight entries never move the result. Returns nan when the total
    weight is zero.

    Example:
        >>> weighted_quantile([3.0, 1.0, 2.0], [1.0, 1.0, 2.0], 0.5)
        2.0
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    keep = w > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        return math.nan
    return float(np.quantile(v, q, weights=w, method="inverted_cdf"))


def weighted_quantiles(values: Sequence[float], weights: Sequence[float], qs: Sequence[float]) -> dict[str, float]:
    return {f"{q:g}": weighted_quantile(values, weights, q) for q in qs}
