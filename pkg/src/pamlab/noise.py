"""Reproducible space-time white noise on a rectangular lattice.

Every normal deviate is a pure function of (seed, replica_id, flat cell
word): the generator is counter-based (Philox keyed by seed and replica),
so replicas are independent streams and any cell can be regenerated in
isolation, in any order, on any schedule, with bitwise-identical results.

Cell (i, j) holds the increment for the time cell [i dt, (i+1) dt) at the
j-th spatial lattice point; the white-noise integral of a step function f
is approximated by sum f(s_i, y_j) xi_ij sqrt(dt dx).

The flat word of a cell is anchored to absolute coordinates: time cell i
occupies the stride [i 2^32, (i+1) 2^32) and the spatial point x sits at
offset round(x / dx) + 2^31 within it. Widening the lattice (a larger
truncation margin) therefore does not re-deal the noise on shared cells,
which is what makes per-replica truncation studies meaningful.

Deviates are inverse-CDF transforms of the top 53 bits of each raw 64-bit
word: u = ((raw >> 11) + 0.5) * 2**-53 lies strictly inside (0, 1), so
ndtri(u) is always finite and no rejection step can desynchronize the
counter contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

_ALIGNMENT_TOL = 1e-9
_WORD_RANGE = 1 << 64
_U53_SCALE = 2.0**-53
_TIME_STRIDE = 1 << 32
_SPACE_ANCHOR = 1 << 31


class ResourceLimitError(RuntimeError):
    """A requested lattice exceeds the configured memory budget."""


@dataclass(frozen=True)
class GridSpec:
    """Space-time lattice: time cells of width dt on (0, t_max], spatial
    points spaced dx on [x_min, x_max].

    Both extents must be integer multiples of their steps (to within
    1e-9 relative), so cell counts are exact.
    """

    t_max: float
    dt: float
    x_min: float
    x_max: float
    dx: float

    def __post_init__(self) -> None:
        if not (0.0 < self.dt <= self.t_max) or not math.isfinite(self.t_max):
            raise ValueError(f"need 0 < dt <= t_max, got dt={self.dt!r}, t_max={self.t_max!r}")
        if not (self.x_min < self.x_max) or not math.isfinite(self.x_min) or not math.isfinite(self.x_max):
            raise ValueError(f"need x_min < x_max, got [{self.x_min!r}, {self.x_max!r}]")
        span = self.x_max - self.x_min
        if not (0.0 < self.dx <= span):
            raise ValueError(f"need 0 < dx <= x_max - x_min, got dx={self.dx!r}, span={span!r}")
        for label, extent, step in (
            ("t_max/dt", self.t_max, self.dt),
            ("(x_max-x_min)/dx", span, self.dx),
            ("x_min/dx", self.x_min, self.dx),
        ):
            ratio = extent / step
            if abs(ratio - round(ratio)) > _ALIGNMENT_TOL * max(1.0, abs(ratio)):
                raise ValueError(f"{label} = {ratio!r} is not an integer multiple")
        if self.n_steps >= _TIME_STRIDE:
            raise ValueError(f"too many time cells for the word layout: {self.n_steps}")
        j0 = self._space_word_offset
        if j0 < 0 or j0 + self.n_x > _TIME_STRIDE:
            raise ValueError(
                f"spatial extent [{self.x_min!r}, {self.x_max!r}] outside the addressable window"
            )

    @property
    def n_steps(self) -> int:
        """Number of time cells."""
        return round(self.t_max / self.dt)

    @property
    def n_x(self) -> int:
        """Number of spatial lattice points (cells plus one)."""
        return round((self.x_max - self.x_min) / self.dx) + 1

    @property
    def _space_word_offset(self) -> int:
        return round(self.x_min / self.dx) + _SPACE_ANCHOR

    def flat_word(self, i: int, j: int = 0) -> int:
        """Stream word of cell (i, j): time-major with a 2^32 spatial stride
        anchored at x = 0, so cell identity does not depend on the extent."""
        return i * _TIME_STRIDE + self._space_word_offset + j

    def times(self) -> np.ndarray:
        """Lattice times 0, dt, ..., t_max (n_steps + 1 values)."""
        return np.arange(self.n_steps + 1) * self.dt

    def xs(self) -> np.ndarray:
        """Spatial lattice points x_min, ..., x_max (n_x values)."""
        return self.x_min + np.arange(self.n_x) * self.dx


def _validate_stream_ids(seed: int, replica_id: int) -> None:
    if not isinstance(seed, (int, np.integer)) or not 0 <= seed < _WORD_RANGE:
        raise ValueError(f"seed must be an integer in [0, 2^64), got {seed!r}")
    if not isinstance(replica_id, (int, np.integer)) or not 0 <= replica_id < _WORD_RANGE:
        raise ValueError(f"replica_id must be an integer in [0, 2^64), got {replica_id!r}")


def _bit_generator_at(seed: int, replica_id: int, start_word: int) -> Philox:
    """Philox stream keyed by (seed, replica_id), positioned at start_word.

    advance() moves whole 4-word counter blocks, so the position within a
    block is reached by drawing and discarding the remainder.
    """
    bg = Philox(key=np.array([seed, replica_id], dtype=np.uint64))
    blocks, within = divmod(start_word, 4)
    if blocks:
        bg.advance(blocks)
    if within:
        bg.random_raw(within)
    return bg


def _normals_from_raw(raw: np.ndarray) -> np.ndarray:
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53_SCALE
    return ndtri(u)


def standard_normals(seed: int, replica_id: int, count: int, start: int = 0) -> np.ndarray:
    """`count` standard normal deviates at flat stream positions
    start, ..., start + count - 1 of the (seed, replica_id) stream."""
    _validate_stream_ids(seed, replica_id)
    if count < 0 or start < 0:
        raise ValueError(f"need count >= 0 and start >= 0, got count={count!r}, start={start!r}")
    if count == 0:
        return np.empty(0)
    bg = _bit_generator_at(seed, replica_id, start)
    return _normals_from_raw(bg.random_raw(count))


@dataclass(frozen=True)
class NoiseSlab:
    """One replica's lattice of iid standard normals, generated on demand.

    Cell (i, j) is the flat stream word grid.flat_word(i, j). slice(i)
    materializes one time row; xi materializes the whole lattice (tests and
    small grids).
    """

    grid: GridSpec
    seed: int
    replica_id: int

    def __post_init__(self) -> None:
        _validate_stream_ids(self.seed, self.replica_id)

    def slice(self, i: int) -> np.ndarray:
        """Row i: deviates for the time cell [i dt, (i+1) dt)."""
        if not 0 <= i < self.grid.n_steps:
            raise IndexError(f"time cell {i!r} outside [0, {self.grid.n_steps})")
        return standard_normals(
            self.seed, self.replica_id, self.grid.n_x, start=self.grid.flat_word(i)
        )

    @property
    def xi(self) -> np.ndarray:
        """Full (n_steps, n_x) array; regenerated on each access."""
        return np.stack([self.slice(i) for i in range(self.grid.n_steps)])


def make_noise(grid: GridSpec, seed: int, replica_id: int,
               max_bytes: int = 2**30) -> NoiseSlab:
    """Slab for one replica, after checking the lattice fits the budget."""
    needed = grid.n_steps * grid.n_x * 8
    if needed > max_bytes:
        raise ResourceLimitError(
            f"lattice needs {needed} bytes ({grid.n_steps} x {grid.n_x} cells), "
            f"budget is {max_bytes}"
        )
    return NoiseSlab(grid=grid, seed=seed, replica_id=replica_id)
