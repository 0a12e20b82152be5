"""Wasserstein distances between quantile functions on a shared grid.

The distance between two distributions is the root-mean-square gap between
their quantile functions over the grid probabilities:

    D(Q1, Q2) = sqrt( (1/J_eff) * sum_j (Q1(p_j) - Q2(p_j))^2 )

Each pair's squared sum is accumulated by a single deterministic reduction
over the grid index, so parallel and serial pairwise computation produce
bit-identical matrices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from distmatch.errors import ConfigError, DataError
from distmatch.quantile import ProbGrid, QuantileFunction
from distmatch.util import atomic_write


@dataclass(frozen=True, eq=False)
class DistanceConfig:
    """Everything that pins down one distance variant: grid plus quantile interpolation."""

    grid: ProbGrid
    interpolation: str = "linear"

    def describe(self) -> str:
        return f"{self.grid.describe()} interpolation={self.interpolation}"


@dataclass(eq=False)
class DistanceMatrix:
    """Symmetric matrix of pairwise distances, zero on the diagonal."""

    ids: list[str]
    values: np.ndarray
    config: DistanceConfig | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = len(self.ids)
        if self.values.shape != (n, n):
            raise DataError(f"distance matrix shape {self.values.shape} does not match {n} ids")
        self._index = {pid: i for i, pid in enumerate(self.ids)}
        if len(self._index) != n:
            raise DataError("distance matrix ids are not unique")

    @property
    def n(self) -> int:
        return len(self.ids)

    def distance(self, id_a: str, id_b: str) -> float:
        return float(self.values[self._index[id_a], self._index[id_b]])

    def index_of(self, participant_id: str) -> int:
        return self._index[participant_id]


def _check_same_grid(q1: QuantileFunction, q2: QuantileFunction) -> None:
    if not q1.grid.same_probs(q2.grid):
        raise DataError(
            "quantile functions are on different grids "
            f"({q1.grid.describe()} vs {q2.grid.describe()})"
        )


def sq_discrepancy(q1: QuantileFunction, q2: QuantileFunction) -> float:
    """Sum of squared quantile gaps over the shared grid."""
    _check_same_grid(q1, q2)
    d = q1.values - q2.values
    return float(np.dot(d, d))


def wasserstein(q1: QuantileFunction, q2: QuantileFunction) -> float:
    """Root mean squared quantile gap; the metric used for matching calipers."""
    _check_same_grid(q1, q2)
    return math.sqrt(sq_discrepancy(q1, q2) / q1.grid.j_eff)


def _fill_rows(stacked: np.ndarray, out: np.ndarray, rows: range, j_eff: int) -> None:
    # one einsum per row: identical reduction regardless of which worker runs it
    for i in rows:
        if i + 1 >= stacked.shape[0]:
            continue
        diffs = stacked[i + 1 :] - stacked[i]
        sq = np.einsum("ij,ij->i", diffs, diffs)
        out[i, i + 1 :] = np.sqrt(sq / j_eff)


def pairwise_matrix(
    quantile_functions: Sequence[QuantileFunction],
    config: DistanceConfig | None = None,
    threads: int = 1,
    ids: Sequence[str] | None = None,
) -> DistanceMatrix:
    """All n(n-1)/2 distances between the given quantile functions.

    Every function must share one grid (checked before any computation).
    ``threads`` > 1 distributes rows over a thread pool; results are
    bit-identical to the serial path because each row is produced by the
    same single-kernel reduction either way.
    """
    qfs = list(quantile_functions)
    if not qfs:
        raise DataError("pairwise_matrix needs at least one quantile function")
    grid = qfs[0].grid
    for qf in qfs[1:]:
        if not qf.grid.same_probs(grid):
            raise DataError("all quantile functions must share one grid")
    if config is not None and not config.grid.same_probs(grid):
        raise DataError("config grid does not match the quantile functions")
    if ids is None:
        ids = [str(i) for i in range(len(qfs))]
    else:
        ids = [str(pid) for pid in ids]
        if len(ids) != len(qfs):
            raise DataError("ids and quantile functions differ in length")

    stacked = np.vstack([qf.values for qf in qfs])
    n = stacked.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    if threads <= 1 or n < 4:
        _fill_rows(stacked, out, range(n), grid.j_eff)
    else:
        # contiguous row blocks; cell writes are disjoint so no locking needed
        block = max(1, -(-n // (threads * 8)))
        starts = list(range(0, n, block))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_fill_rows, stacked, out, range(s, min(s + block, n)), grid.j_eff)
                for s in starts
            ]
            for future in futures:
                future.result()
    out = out + out.T
    return DistanceMatrix(ids=ids, values=out, config=config or DistanceConfig(grid=grid))


def pairwise_from_cohort(
    cohort,
    config: DistanceConfig,
    threads: int = 1,
) -> DistanceMatrix:
    """Pooled quantile functions for every participant, then the full matrix."""
    from distmatch.quantile import pooled_quantiles

    qfs = []
    ids = []
    for participant in cohort.participants:
        qfs.append(pooled_quantiles(participant, config.grid, interpolation=config.interpolation))
        ids.append(participant.participant_id)
    return pairwise_matrix(qfs, config=config, threads=threads, ids=ids)


def upper_triangle(matrix: DistanceMatrix) -> np.ndarray:
    """The n(n-1)/2 distinct distances, ordered by (row, column)."""
    iu = np.triu_indices(matrix.n, k=1)
    return matrix.values[iu]


def write_matrix_csv(matrix: DistanceMatrix, path: str | Path) -> None:
    """Upper-triangle CSV `id_a,id_b,distance` with a config comment header."""
    with atomic_write(path) as out:
        if matrix.config is not None:
            out.write(f"# {matrix.config.describe()}\n")
        out.write("id_a,id_b,distance\n")
        ids = matrix.ids
        values = matrix.values
        for i in range(len(ids)):
            row = values[i]
            for j in range(i + 1, len(ids)):
                out.write(f"{ids[i]},{ids[j]},{row[j]!r}\n")


def read_matrix_csv(path: str | Path) -> DistanceMatrix:
    """Rebuild a DistanceMatrix from the CSV written by ``write_matrix_csv``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"distance file not found: {path}")
    ids: list[str] = []
    index: dict[str, int] = {}
    entries: list[tuple[str, str, float]] = []
    with path.open() as handle:
        header_seen = False
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if not header_seen:
                if line != "id_a,id_b,distance":
                    raise DataError(f"{path}:{lineno}: expected header 'id_a,id_b,distance'")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            id_a, id_b, text = parts
            try:
                value = float(text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric distance {text!r}") from None
            if not math.isfinite(value) or value < 0:
                raise DataError(f"{path}:{lineno}: invalid distance {value!r}")
            for pid in (id_a, id_b):
                if pid not in index:
                    index[pid] = len(ids)
                    ids.append(pid)
            entries.append((id_a, id_b, value))
    n = len(ids)
    if n == 0:
        raise DataError(f"{path}: no distances found")
    values = np.zeros((n, n), dtype=np.float64)
    for id_a, id_b, value in entries:
        i, j = index[id_a], index[id_b]
        values[i, j] = value
        values[j, i] = value
    return DistanceMatrix(ids=ids, values=values, config=None)
