"""Probability grids and per-participant empirical quantile functions.

A grid is the finite, sorted set of probabilities at which quantile functions
are evaluated.  The default construction places J points at j/(J+1) for
j = 1..J and keeps those inside the configured interval.  Consequence: for
small J the grid is identical across the standard intervals [0,1],
[0.01,0.99], [0.05,0.95] (the points never leave the narrowest interval),
while for large J the narrower intervals genuinely truncate the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from distmatch.errors import ConfigError, DataError

GRID_RULES = ("truncated", "closed")
INTERPOLATIONS = ("linear", "nearest")

# absorbs float rounding when intersecting j/(J+1) with user-typed endpoints
_EDGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProbGrid:
    """Sorted probabilities p_1 < ... < p_Jeff at which quantiles are taken.

    ``j_nominal`` is the requested term count before interval truncation;
    ``j_eff`` (the length of ``probs``) is the count actually evaluated and
    is the denominator of the distance normalization.
    """

    j_nominal: int
    interval: tuple[float, float]
    probs: np.ndarray
    rule: str = "truncated"

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "interval", (float(self.interval[0]), float(self.interval[1])))
        if probs.ndim != 1 or probs.size == 0:
            raise ConfigError("probability grid must be a non-empty 1-D array")
        if np.any(~np.isfinite(probs)) or probs[0] < 0.0 or probs[-1] > 1.0:
            raise ConfigError("grid probabilities must be finite and within [0, 1]")
        if np.any(np.diff(probs) <= 0.0):
            raise ConfigError("grid probabilities must be strictly increasing")

    @property
    def j_eff(self) -> int:
        return int(self.probs.size)

    def key(self) -> bytes:
        """Identity of the evaluated probabilities, byte-exact.

        Two grids with equal keys produce bit-identical quantile vectors and
        distances; interval-truncation aliases (same points surviving in
        different intervals) collapse to one key.
        """
        return self.probs.tobytes()

    def same_probs(self, other: "ProbGrid") -> bool:
        return self.key() == other.key()

    def describe(self) -> str:
        a, b = self.interval
        return f"J={self.j_nominal} interval=[{a:g},{b:g}] rule={self.rule} J_eff={self.j_eff}"


def build_grid(j: int, interval: Sequence[float] = (0.0, 1.0), rule: str = "truncated") -> ProbGrid:
    """Construct the probability grid for a (J, interval) configuration.

    rule="truncated" (default): take the base set {j/(J+1) : j = 1..J} and
    keep the points falling inside [a, b] (inclusive).  rule="closed": J
    evenly spaced points from a to b inclusive (J >= 2), kept as a
    sensitivity alternative.

    Raises ConfigError if the truncation leaves no points.
    """
    if int(j) != j or j < 1:
        raise ConfigError(f"J must be a positive integer, got {j!r}")
    j = int(j)
    a, b = float(interval[0]), float(interval[1])
    if not (0.0 <= a < b <= 1.0):
        raise ConfigError(f"interval must satisfy 0 <= a < b <= 1, got [{a}, {b}]")
    if rule == "truncated":
        base = np.arange(1, j + 1, dtype=np.float64) / (j + 1)
        keep = (base >= a - _EDGE_TOL) & (base <= b + _EDGE_TOL)
        probs = base[keep]
        if probs.size == 0:
            raise ConfigError(f"grid empty for (J={j}, interval=[{a:g},{b:g}])")
    elif rule == "closed":
        if j < 2:
            raise ConfigError("rule='closed' needs J >= 2 to include both endpoints")
        probs = np.linspace(a, b, j)
    else:
        raise ConfigError(f"unknown grid rule {rule!r} (expected one of {GRID_RULES})")
    return ProbGrid(j_nominal=j, interval=(a, b), probs=probs, rule=rule)


def explicit_grid(probs: Sequence[float]) -> ProbGrid:
    """Grid with explicitly listed probabilities (no base-set construction)."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.size == 0:
        raise ConfigError("explicit grid needs at least one probability")
    return ProbGrid(
        j_nominal=int(arr.size),
        interval=(float(arr.min()), float(arr.max())),
        probs=arr,
        rule="explicit",
    )


@dataclass(frozen=True, eq=False)
class QuantileFunction:
    """Quantile values Q(p_j) on a grid, in activity-count units.

    ``n_source`` records how many pooled minute observations produced the
    estimate.  Values are non-decreasing in p by construction.
    """

    grid: ProbGrid
    values: np.ndarray
    n_source: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != self.grid.probs.shape:
            raise DataError(
                f"quantile values have length {values.size}, grid has {self.grid.j_eff}"
            )
        if np.any(~np.isfinite(values)):
            raise DataError("quantile values must be finite")
        if np.any(np.diff(values) < 0.0):
            raise DataError("quantile values must be non-decreasing in p")


def empirical_quantiles(
    samples: Sequence[float] | np.ndarray,
    grid: ProbGrid,
    interpolation: str = "linear",
) -> QuantileFunction:
    """Empirical quantile function of a sample evaluated on ``grid``.

    interpolation="linear" (default) uses the linearly interpolated order
    statistic: with the n samples sorted ascending as x(1..n) and
    h = (n-1)p + 1, Q(p) = x(floor h) + (h - floor h) * (x(floor h + 1) -
    x(floor h)).  interpolation="nearest" snaps to the closest order
    statistic instead.
    """
    if interpolation not in INTERPOLATIONS:
        raise ConfigError(f"unknown interpolation {interpolation!r} (expected one of {INTERPOLATIONS})")
    arr = np.asarray(samples, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DataError("cannot compute quantiles of an empty sample")
    if np.any(np.isnan(arr)):
        raise DataError("sample contains NaN")
    if np.any(np.isinf(arr)):
        raise DataError("sample contains non-finite values")
    values = np.quantile(arr, grid.probs, method=interpolation)
    return QuantileFunction(grid=grid, values=values, n_source=int(arr.size))


def pooled_quantiles(
    participant,
    grid: ProbGrid,
    interpolation: str = "linear",
    wear_mask: bool = False,
    zero_run_threshold: int = 90,
) -> QuantileFunction:
    """Quantile function of a participant's minutes pooled over all good days.

    By default every minute of every good day enters the pool, zeros
    included.  With ``wear_mask=True``, minutes belonging to zero-runs of at
    least ``zero_run_threshold`` consecutive zeros are dropped before
    pooling.
    """
    days = participant.good_days
    if not days:
        raise DataError(f"participant {participant.participant_id} has no good days")
    if wear_mask:
        from distmatch.ingest import wear_minute_mask

        parts = [day.counts[wear_minute_mask(day.counts, zero_run_threshold)] for day in days]
    else:
        parts = [day.counts for day in days]
    pooled = np.concatenate(parts)
    return empirical_quantiles(pooled, grid, interpolation=interpolation)
