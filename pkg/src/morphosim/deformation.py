"""Displacement fields: pull-back warping, composition, inversion, Jacobians.

A field ``U`` stores, for every output voxel ``x``, the offset to the source
location: ``warp(v, U)(x) = v(x + U(x))``. Displacements are in voxel units.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError
from .morphometry import VbmMap
from .volume import Grid3, Volume3, check_same_grid, identity_coords, interpolate


@dataclass(frozen=True, eq=False)
class DisplacementField3:
    grid: Grid3
    data: np.ndarray  # shape (nx, ny, nz, 3)
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 1:
            if data.size != 3 * self.grid.size:
                raise InvalidArgumentError(
                    f"field data length {data.size} != 3 * grid size {self.grid.size}")
            # interleaved (u1, u2, u3) per voxel, x fastest
            data = data.reshape((3,) + self.grid.dims, order="F").transpose(1, 2, 3, 0)
        if data.shape != self.grid.dims + (3,):
            raise InvalidArgumentError(f"field shape {data.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("displacement field contains NaN or Inf")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: Grid3) -> "DisplacementField3":
        return cls(grid, np.zeros(grid.dims + (3,)))

    @classmethod
    def constant(cls, grid: Grid3, vec) -> "DisplacementField3":
        return cls(grid, np.broadcast_to(np.asarray(vec, dtype=np.float64), grid.dims + (3,)))

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data ** 2, axis=-1))

    def mean_magnitude(self) -> float:
        return float(self.magnitude().mean())


def _sample_points(f_data: np.ndarray) -> list[np.ndarray]:
    coords = identity_coords(f_data.shape[:3])
    return [coords[i] + f_data[..., i] for i in range(3)]


def warp(v: Volume3, f: DisplacementField3) -> Volume3:
    """Resample ``v`` at ``x + U(x)`` (boundary clamped)."""
    check_same_grid(v, f)
    return v.with_data(interpolate(v.data, _sample_points(f.data), extend="clamp"))


def jacobian_map(f: DisplacementField3) -> VbmMap:
    """Determinant of ``I + dU/dx`` at every voxel.

    Derivatives are taken per voxel index: central differences inside the
    grid, one-sided differences on the boundary layer.
    """
    u = f.data
    # jac[..., i, j] = dU_i / dx_j
    jac = np.empty(f.grid.dims + (3, 3))
    for i in range(3):
        for j, g in enumerate(np.gradient(u[..., i], axis=(0, 1, 2))):
            jac[..., i, j] = g
        jac[..., i, i] += 1.0
    a, b, c = jac[..., 0, 0], jac[..., 0, 1], jac[..., 0, 2]
    d, e, g = jac[..., 1, 0], jac[..., 1, 1], jac[..., 1, 2]
    h, k, m = jac[..., 2, 0], jac[..., 2, 1], jac[..., 2, 2]
    det = a * (e * m - g * k) - b * (d * m - g * h) + c * (d * k - e * h)
    return VbmMap(f.grid, det)


def _compose_data(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g + interpolate(f, _sample_points(g), extend="zero")


def compose(f: DisplacementField3, g: DisplacementField3) -> DisplacementField3:
    """Field ``c`` with ``c(x) = g(x) + f(x + g(x))``.

    Warping with the result equals ``warp(warp(v, f), g)``. ``f`` is sampled
    trilinearly with zero extension outside the grid.
    """
    check_same_grid(f, g)
    return DisplacementField3(f.grid, _compose_data(f.data, g.data))


def invert(f: DisplacementField3, iters: int = 50, tol: float = 1e-4) -> DisplacementField3:
    """Approximate inverse by the fixed point ``v <- -f(x + v(x))``.

    Starts from ``-f`` and stops once the mean update norm drops below
    ``tol``. The iterate with the smallest inverse residual
    ``|v(x) + f(x + v(x))|`` is returned; ``meta`` records ``converged``,
    ``iterations`` and ``residual``.
    """
    if iters < 1:
        raise InvalidArgumentError(f"iters must be >= 1, got {iters}")
    fd = f.data
    v = -fd
    best, best_res = v, np.inf
    converged = False
    n = 0
    for n in range(1, iters + 1):
        sampled = interpolate(fd, _sample_points(v), extend="zero")
        res = float(np.sqrt(np.sum((v + sampled) ** 2, axis=-1)).mean())
        if res < best_res:
            best, best_res = v, res
        new = -sampled
        update = float(np.sqrt(np.sum((new - v) ** 2, axis=-1)).mean())
        v = new
        if update < tol:
            converged = True
            break
    res = float(np.sqrt(np.sum((v + interpolate(fd, _sample_points(v), extend="zero")) ** 2, axis=-1)).mean())
    if res <= best_res:
        best, best_res = v, res
    return DisplacementField3(f.grid, best, {"converged": converged, "iterations": n, "residual": best_res})


def smooth_field(data: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian smoothing of each displacement component (sigma in voxels)."""
    if sigma <= 0:
        return data
    out = np.empty_like(data)
    for i in range(data.shape[-1]):
        ndimage.gaussian_filter(data[..., i], sigma, output=out[..., i], mode="nearest", truncate=3.0)
    return out
