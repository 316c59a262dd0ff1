"""Comparison metrics: satisfactory error, moving averages and the
weighted-sum utility that ranks schemes (lower is better)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

# weight rows of the scheme-comparison sweep: (error, groups, complexity)
UTILITY_WEIGHT_ROWS: tuple[tuple[float, float, float], ...] = (
    (1 / 3, 1 / 3, 1 / 3),
    (1 / 2, 1 / 4, 1 / 4),
    (1 / 4, 1 / 2, 1 / 4),
    (1 / 4, 1 / 4, 1 / 2),
)

UTILITY_COMPONENTS = ("satisfactory_error", "groups_used", "decision_evals")


@dataclass(frozen=True)
class UtilityWeights:
    error: float
    groups: float
    complexity: float

    def __post_init__(self) -> None:
        vals = (self.error, self.groups, self.complexity)
        if any(w < 0 for w in vals):
            raise ValueError("weights must be non-negative")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.error, self.groups, self.complexity)


def satisfactory_error(omegas: Sequence[float]) -> float:
    """Mean absolute satisfaction shortfall per slot."""
    if len(omegas) == 0:
        raise ValueError("empty trace")
    return float(np.mean(np.abs(omegas)))


def moving_average(series: Sequence[float], window: int) -> list[float]:
    """Trailing mean over the last min(window, i+1) entries."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    acc = 0.0
    buf: list[float] = []
    for x in series:
        buf.append(float(x))
        acc += float(x)
        if len(buf) > window:
            acc -= buf.pop(0)
        out.append(acc / len(buf))
    return out


def _normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi - lo <= 0.0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def weighted_utility(
    metrics: Mapping[str, Mapping[str, float]],
    weights: UtilityWeights | tuple[float, float, float],
) -> dict[str, float]:
    """Min-max normalize each component across schemes, then weight-sum.

    ``metrics`` maps scheme name to a dict containing the three components
    named in :data:`UTILITY_COMPONENTS`. Degenerate components (identical
    across schemes) normalize to zero for everyone. Lower utility is better.
    """
    if len(metrics) < 2:
        raise ValueError("need at least two schemes to compare")
    if not isinstance(weights, UtilityWeights):
        weights = UtilityWeights(*weights)
    names = list(metrics.keys())
    table = np.array([[metrics[n][c] for c in UTILITY_COMPONENTS] for n in names])
    normed = np.column_stack([_normalize(table[:, j]) for j in range(table.shape[1])])
    scores = normed @ np.array(weights.as_tuple())
    return {n: float(s) for n, s in zip(names, scores)}
