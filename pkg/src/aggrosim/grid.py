"""Uniform Cartesian grids on a truncated box and integral functionals of fields.

The box is ``[-L, L)^d`` split into ``n`` cells per axis.  Field values are
cell averages; every functional uses the midpoint rule at cell centers.
Arrays are indexed ``values[i0, i1, ...]`` with axis ``a`` along ``x_a``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

SNAPSHOT_MAGIC = b"AGGS"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GridSpec:
    """Box ``[-L, L)^dim`` with ``n`` cells per axis."""

    dim: int
    half_width: float
    cells_per_axis: int

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        n = self.cells_per_axis
        if n < 16 or n & (n - 1):
            raise ValueError(f"cells_per_axis must be a power of two >= 16, got {n}")

    @property
    def n(self) -> int:
        return self.cells_per_axis

    @property
    def L(self) -> float:
        return self.half_width

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells_per_axis

    h = spacing

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.dim

    def centers(self) -> np.ndarray:
        """1-D cell-center coordinates ``-L + (i + 1/2) h``."""
        return -self.half_width + (np.arange(self.cells_per_axis) + 0.5) * self.spacing

    def edges(self) -> np.ndarray:
        return -self.half_width + np.arange(self.cells_per_axis + 1) * self.spacing

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Sparse (broadcastable) coordinate arrays, one per axis."""
        x = self.centers()
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij", sparse=True))

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(xa**2 for xa in self.mesh()))

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dim, self.half_width, self.cells_per_axis * factor)


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, func) -> "ScalarField":
        """Sample ``func(*coords)`` at cell centers."""
        return cls(grid, np.broadcast_to(func(*grid.mesh()), grid.shape).astype(float))

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Face-centered vector field.

    Component ``a`` lives on the interior faces normal to axis ``a`` and has
    ``n - 1`` entries along that axis.  Boundary faces carry zero flux and
    are not stored.
    """

    grid: GridSpec
    components: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if len(self.components) != self.grid.dim:
            raise ValueError("component count must equal grid.dim")
        for a, comp in enumerate(self.components):
            expected = list(self.grid.shape)
            expected[a] -= 1
            if comp.shape != tuple(expected):
                raise ValueError(f"component {a} has shape {comp.shape}, expected {tuple(expected)}")

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(c))) if c.size else 0.0 for c in self.components)


def gaussian_field(
    grid: GridSpec,
    mass: float = 1.0,
    eps: float = 1.0,
    center: Sequence[float] | None = None,
    cell_average: bool = True,
) -> ScalarField:
    """Discretize ``M (eps/pi)^{d/2} exp(-eps |x - x0|^2)``.

    With ``cell_average`` the exact cell averages are used (products of erf
    differences), otherwise point values at the cell centers.
    """
    d = grid.dim
    x0 = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if cell_average:
        e = grid.edges()
        se = np.sqrt(eps)
        factors = []
        for a in range(d):
            w = 0.5 * (erf(se * (e[1:] - x0[a])) - erf(se * (e[:-1] - x0[a]))) / grid.spacing
            shape = [1] * d
            shape[a] = -1
            factors.append(w.reshape(shape))
        vals = mass * np.prod(np.broadcast_arrays(*factors), axis=0)
    else:
        r2 = sum((xa - x0[a]) ** 2 for a, xa in enumerate(grid.mesh()))
        vals = mass * (eps / np.pi) ** (d / 2) * np.exp(-eps * r2)
    return ScalarField(grid, np.broadcast_to(vals, grid.shape).copy())


# ---------------------------------------------------------------- functionals


def _vals(f: ScalarField | np.ndarray) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f)


def integrate(f: ScalarField) -> float:
    """Midpoint rule: ``h^d * sum(values)``."""
    return float(f.grid.cell_volume * np.sum(f.values))


def lp_norm(f: ScalarField, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    v = np.abs(f.values)
    if np.isinf(p):
        return float(v.max()) if v.size else 0.0
    vmax = float(v.max())
    if vmax == 0.0:
        return 0.0
    # scale to avoid overflow for large p
    s = np.sum((v / vmax) ** p) * f.grid.cell_volume
    return float(vmax * s ** (1.0 / p))


def weak_lp_norm(f: ScalarField, p: float) -> float:
    """Dyadic-ladder estimate of ``sup_lambda lambda |{|f| > lambda}|^{1/p}``.

    Levels are ``2^j`` for ``j = -40..40`` restricted to ``[min|f|>0, max|f|]``;
    the estimate is within a factor ``2^{1/p}`` of the true supremum.
    """
    if p <= 1:
        raise ValueError(f"p must be > 1, got {p}")
    v = np.abs(f.values).ravel()
    pos = v[v > 0]
    if pos.size == 0:
        return 0.0
    lo, hi = float(pos.min()), float(pos.max())
    levels = 2.0 ** np.arange(-40, 41)
    levels = levels[(levels >= lo) & (levels <= hi)]
    if levels.size == 0:
        levels = np.array([lo])
    srt = np.sort(v)
    counts = v.size - np.searchsorted(srt, levels, side="right")
    meas = counts * f.grid.cell_volume
    return float(np.max(levels * meas ** (1.0 / p)))


def second_moment(f: ScalarField) -> float:
    r2 = sum(xa**2 for xa in f.grid.mesh())
    return float(f.grid.cell_volume * np.sum(r2 * f.values))


def tail_norm(f: ScalarField, k: float, q: float) -> float:
    """``|| (f - k)_+ ||_q``."""
    return lp_norm(f.with_values(np.maximum(f.values - k, 0.0)), q)


def boundary_ring_mask(grid: GridSpec, fraction: float = 0.05) -> np.ndarray:
    """Cells within ``fraction * L`` of the box boundary."""
    x = grid.centers()
    outer = np.abs(x) > (1.0 - fraction) * grid.half_width
    mask = np.zeros(grid.shape, dtype=bool)
    for a in range(grid.dim):
        shape = [1] * grid.dim
        shape[a] = -1
        mask |= outer.reshape(shape)
    return mask


# ---------------------------------------------------------------- snapshots


def encode_snapshot(f: ScalarField) -> bytes:
    g = f.grid
    header = SNAPSHOT_MAGIC + struct.pack("<IIId", SNAPSHOT_VERSION, g.dim, g.n, g.half_width)
    # x fastest: reverse the axis order before a C-order dump
    body = np.ascontiguousarray(f.values.T, dtype="<f8").tobytes()
    return header + body


def decode_snapshot(data: bytes) -> ScalarField:
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not an AGGS snapshot (bad magic)")
    version, d, n, L = struct.unpack_from("<IIId", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    grid = GridSpec(d, L, n)
    offset = 4 + struct.calcsize("<IIId")
    expected = offset + 8 * n**d
    if len(data) != expected:
        raise ValueError(f"snapshot size {len(data)} != expected {expected}")
    vals = np.frombuffer(data, dtype="<f8", offset=offset).reshape((n,) * d).T.astype(float)
    return ScalarField(grid, np.ascontiguousarray(vals))


def write_snapshot(path: str | os.PathLike, f: ScalarField) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_snapshot(f))
    os.replace(tmp, path)


def read_snapshot(path: str | os.PathLike) -> ScalarField:
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())
