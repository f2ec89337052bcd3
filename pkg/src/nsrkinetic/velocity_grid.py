"""Tensor-product discrete velocity grids with midpoint quadrature weights."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class AxisGrid:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        if p.ndim != 1 or p.shape != w.shape:
            raise ValueError("points and weights must be 1-D arrays of equal length")
        if p.size >= 2 and not np.all(np.diff(p) > 0):
            raise ValueError("axis points must be strictly increasing")
        if not np.all(w > 0):
            raise ValueError("axis weights must be positive")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.size

    @property
    def lower(self):
        return float(self.points[0] - 0.5 * self.weights[0])

    @property
    def upper(self):
        return float(self.points[-1] + 0.5 * self.weights[-1])

    @property
    def is_uniform(self):
        w = self.weights
        d = np.diff(self.points)
        return bool(np.allclose(w, w[0], rtol=1e-12, atol=0)
                    and (d.size == 0 or np.allclose(d, w[0], rtol=1e-12, atol=0)))


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Three axis grids; linear index is lexicographic with axis 3 fastest."""

    axes: tuple

    def __post_init__(self):
        if len(self.axes) != 3:
            raise ValueError("a velocity grid needs exactly three axes")
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def n_v(self):
        n1, n2, n3 = self.shape
        return n1 * n2 * n3

    total_points = n_v

    @cached_property
    def weights(self):
        """Flattened product weights, length N_v."""
        w1, w2, w3 = (a.weights for a in self.axes)
        w = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
        w.setflags(write=False)
        return w

    @cached_property
    def points(self):
        """Velocity points as an (N_v, 3) array."""
        mesh = np.meshgrid(*(a.points for a in self.axes), indexing="ij")
        v = np.stack([m.ravel() for m in mesh], axis=-1)
        v.setflags(write=False)
        return v

    @property
    def is_uniform(self):
        return all(a.is_uniform for a in self.axes)

    @property
    def is_cubic(self):
        a0 = self.axes[0]
        return all(len(a) == len(a0) and np.array_equal(a.points, a0.points)
                   and np.array_equal(a.weights, a0.weights) for a in self.axes)

    def same_as(self, other):
        return self is other or all(
            np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
            for a, b in zip(self.axes, other.axes))


def build_uniform_grid(v_min, v_max, counts) -> VelocityGrid:
    """Midpoints of a uniform partition of [v_min, v_max] along each axis.

    ``v_min``/``v_max`` may be scalars (cubic box) or length-3 sequences.
    """
    counts = tuple(int(c) for c in np.broadcast_to(np.asarray(counts), (3,)))
    lo = np.broadcast_to(np.asarray(v_min, dtype=float), (3,))
    hi = np.broadcast_to(np.asarray(v_max, dtype=float), (3,))
    axes = []
    for n, a, b in zip(counts, lo, hi):
        if n < 2:
            raise ValueError(f"axis count must be >= 2, got {n}")
        if not a < b:
            raise ValueError(f"need v_min < v_max, got [{a}, {b}]")
        h = (b - a) / n
        axes.append(AxisGrid(a + (np.arange(n) + 0.5) * h, np.full(n, h)))
    return VelocityGrid(tuple(axes))


def linear_index(grid: VelocityGrid, l1: int, l2: int, l3: int) -> int:
    n1, n2, n3 = grid.shape
    for i, n in zip((l1, l2, l3), (n1, n2, n3)):
        if not 0 <= i < n:
            raise IndexError(f"axis index {i} out of range [0, {n})")
    return (l1 * n2 + l2) * n3 + l3


def multi_index(grid: VelocityGrid, l: int):
    if not 0 <= l < grid.n_v:
        raise IndexError(f"linear index {l} out of range [0, {grid.n_v})")
    _, n2, n3 = grid.shape
    return l // (n2 * n3), (l // n3) % n2, l % n3


# Serialized block: three uint64 counts, then points and weights per axis (LE f64).
def grid_to_bytes(grid: VelocityGrid) -> bytes:
    out = [struct.pack("<3Q", *grid.shape)]
    for a in grid.axes:
        out.append(a.points.astype("<f8").tobytes())
        out.append(a.weights.astype("<f8").tobytes())
    return b"".join(out)


def grid_from_bytes(buf: bytes, offset: int = 0):
    """Parse a grid block; returns (grid, new_offset)."""
    counts = struct.unpack_from("<3Q", buf, offset)
    offset += 24
    axes = []
    for n in counts:
        p = np.frombuffer(buf, "<f8", n, offset).astype(np.float64)
        offset += 8 * n
        w = np.frombuffer(buf, "<f8", n, offset).astype(np.float64)
        offset += 8 * n
        axes.append(AxisGrid(p, w))
    return VelocityGrid(tuple(axes)), offset
