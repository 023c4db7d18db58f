"""Scalar volumes and binary masks on regular 3D grids.

Arrays are stored with shape ``(nx, ny, nz)`` and indexed ``[x, y, z]``.
Serialized payloads are x-fastest, which is numpy's Fortran order for that
shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import DegenerateInputError, DimensionError, InvalidArgumentError

_SPACING_RTOL = 1e-6


@dataclass(frozen=True)
class Grid3:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise InvalidArgumentError("Grid3 needs exactly three dims and three spacings")
        if any(d < 2 for d in dims):
            raise InvalidArgumentError(f"all grid dims must be >= 2, got {dims}")
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise InvalidArgumentError(f"grid spacing must be finite and > 0, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def matches(self, other: "Grid3") -> bool:
        if self.dims != other.dims:
            return False
        return all(abs(a - b) <= _SPACING_RTOL * max(a, b) for a, b in zip(self.spacing, other.spacing))

    def __str__(self):
        d, s = self.dims, self.spacing
        return f"{d[0]}x{d[1]}x{d[2]} @ {s[0]:g}x{s[1]:g}x{s[2]:g} mm"


def check_same_grid(*items) -> Grid3:
    """Return the common grid of ``items`` or raise :class:`DimensionError`."""
    grid = items[0].grid
    for other in items[1:]:
        if not grid.matches(other.grid):
            raise DimensionError(f"grid mismatch: {grid} vs {other.grid}")
    return grid


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Volume3:
    grid: Grid3
    data: np.ndarray
    # raw qform/sform header bytes, carried through untouched
    geometry: bytes | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            if data.size != self.grid.size:
                raise InvalidArgumentError(
                    f"data length {data.size} does not match grid size {self.grid.size}")
            data = data.reshape(self.grid.dims, order="F")
        if data.shape != self.grid.dims:
            raise InvalidArgumentError(f"data shape {data.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("volume data contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_array(cls, data, spacing=(1.0, 1.0, 1.0)) -> "Volume3":
        data = np.asarray(data)
        return cls(Grid3(data.shape, spacing), data)

    def flat(self) -> np.ndarray:
        """Payload in x-fastest order."""
        return self.data.ravel(order="F")

    def with_data(self, data) -> "Volume3":
        return Volume3(self.grid, data, self.geometry)


@dataclass(frozen=True, eq=False)
class Mask3:
    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data.reshape(self.grid.dims, order="F")
        if data.shape != self.grid.dims:
            raise InvalidArgumentError(f"mask shape {data.shape} does not match grid {self.grid.dims}")
        object.__setattr__(self, "data", _frozen(data.astype(bool)))

    @property
    def count(self) -> int:
        return int(self.data.sum())

    def require_nonempty(self) -> None:
        if not self.data.any():
            raise InvalidArgumentError("mask is empty (|mask| = 0)")


# --- interpolation -----------------------------------------------------------

@njit(cache=True)
def _trilinear(flat, dims, xs, ys, zs, zero_ext, out):
    nx, ny, nz = dims[0], dims[1], dims[2]
    nc = flat.shape[1]
    for p in range(xs.shape[0]):
        x, y, z = xs[p], ys[p], zs[p]
        if zero_ext:
            x0, y0, z0 = math.floor(x), math.floor(y), math.floor(z)
        else:
            x = min(max(x, 0.0), nx - 1.0)
            y = min(max(y, 0.0), ny - 1.0)
            z = min(max(z, 0.0), nz - 1.0)
            x0 = min(math.floor(x), nx - 2.0)
            y0 = min(math.floor(y), ny - 2.0)
            z0 = min(math.floor(z), nz - 2.0)
        fx, fy, fz = x - x0, y - y0, z - z0
        ix, iy, iz = int(x0), int(y0), int(z0)
        for c in range(nc):
            out[p, c] = 0.0
        for dx in range(2):
            wx = fx if dx else 1.0 - fx
            cx = ix + dx
            if cx < 0 or cx >= nx:
                continue
            for dy in range(2):
                wy = fy if dy else 1.0 - fy
                cy = iy + dy
                if cy < 0 or cy >= ny:
                    continue
                for dz in range(2):
                    wz = fz if dz else 1.0 - fz
                    cz = iz + dz
                    if cz < 0 or cz >= nz:
                        continue
                    w = wx * wy * wz
                    idx = (cx * ny + cy) * nz + cz
                    for c in range(nc):
                        out[p, c] += w * flat[idx, c]


def interpolate(data: np.ndarray, coords, extend: str = "clamp") -> np.ndarray:
    """Trilinear interpolation of ``data`` at continuous voxel coordinates.

    Parameters
    ----------
    data : ndarray, shape (nx, ny, nz) or (nx, ny, nz, C)
        Samples on the grid. Trailing channels share the interpolation weights.
    coords : sequence of three arrays
        Voxel coordinates (x, y, z), all of one shape.
    extend : {"clamp", "zero"}
        ``clamp`` snaps coordinates onto the boundary voxel layer; ``zero``
        treats every voxel outside the grid as 0.

    Returns
    -------
    ndarray of the coordinate shape (plus the channel axis, if any).
    """
    if extend not in ("clamp", "zero"):
        raise InvalidArgumentError(f"unknown extension mode {extend!r}")
    dims = np.array(data.shape[:3], dtype=np.int64)
    channels = data.shape[3:]
    flat = np.ascontiguousarray(data, dtype=np.float64).reshape(int(dims.prod()), -1)
    xs, ys, zs = (np.ascontiguousarray(c, dtype=np.float64) for c in coords)
    shape = xs.shape
    out = np.empty((xs.size, flat.shape[1]))
    _trilinear(flat, dims, xs.ravel(), ys.ravel(), zs.ravel(), extend == "zero", out)
    return out.reshape(shape + channels)


def sample_trilinear(v: Volume3, p: Sequence[float]) -> float:
    """Sample ``v`` at one continuous voxel coordinate (boundary clamped)."""
    p = [float(c) for c in p]
    if len(p) != 3 or not all(math.isfinite(c) for c in p):
        raise InvalidArgumentError(f"sample point must be a finite 3-vector, got {p}")
    out = interpolate(v.data, [np.array([c]) for c in p], extend="clamp")
    return float(out[0])


def identity_coords(dims) -> np.ndarray:
    """Voxel-index coordinates, shape (3, nx, ny, nz)."""
    return np.indices(dims, dtype=np.float64)


# --- masks ---------------------------------------------------------------------

def ball(radius: int) -> np.ndarray:
    """Euclidean ball structuring element of integer ``radius``."""
    r = int(radius)
    ax = np.arange(-r, r + 1)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    return x * x + y * y + z * z <= r * r


def dilate_mask(m: Mask3, radius_voxels: int) -> Mask3:
    if int(radius_voxels) != radius_voxels or radius_voxels < 0:
        raise InvalidArgumentError(f"dilation radius must be a non-negative integer, got {radius_voxels}")
    if radius_voxels == 0:
        return m
    out = ndimage.binary_dilation(m.data, structure=ball(radius_voxels), border_value=0)
    return Mask3(m.grid, out)


def minmax_normalize(values: np.ndarray, where: np.ndarray | None = None, what: str = "volume") -> np.ndarray:
    """Rescale to [0, 1] using the min/max taken over ``where`` (default: all)."""
    ref = values if where is None else values[where]
    lo, hi = float(ref.min()), float(ref.max())
    if not hi > lo:
        raise DegenerateInputError(f"{what} has zero intensity range")
    return (values - lo) / (hi - lo)
