"""Symmetric multi-resolution demons registration.

Both inputs are pulled onto a mid-way space by their own half-field. At every
iteration the mismatch between the two warped images yields one demons force
that pushes the half-fields in opposite directions, so swapping the inputs
swaps the half-fields exactly. The full transforms are assembled from one
half-field and the inverse of the other.

The force is ``diff * J / (|J|^2 + diff^2 + force_floor^2)``; the floor keeps
noise in flat regions (tiny ``J``, noise-sized ``diff``) from driving
half-voxel updates.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .deformation import DisplacementField3, compose, invert, jacobian_map, smooth_field
from .errors import InvalidArgumentError
from .volume import Volume3, check_same_grid, identity_coords, interpolate, minmax_normalize

log = logging.getLogger(__name__)

_MIN_LEVEL_DIM = 8
_MAX_BACKTRACKS = 4


@dataclass(frozen=True)
class RegistrationParams:
    levels: int = 3
    iters_per_level: tuple[int, ...] = (100, 60, 30)
    update_smoothing_sigma: float = 1.0
    field_smoothing_sigma: float = 1.5
    step_scale: float = 1.0
    convergence_tol: float = 1e-4
    image_smoothing_sigma: float = 0.0
    force_floor: float = 0.2
    inverse_iters: int = 50
    inverse_tol: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "iters_per_level", tuple(int(i) for i in self.iters_per_level))
        if int(self.levels) != self.levels or self.levels < 1:
            raise InvalidArgumentError(f"levels must be an integer >= 1, got {self.levels}")
        if len(self.iters_per_level) != self.levels:
            raise InvalidArgumentError(
                f"iters_per_level has {len(self.iters_per_level)} entries for {self.levels} levels")
        if any(i < 1 for i in self.iters_per_level):
            raise InvalidArgumentError("every iters_per_level entry must be >= 1")
        if self.update_smoothing_sigma < 0 or self.field_smoothing_sigma < 0:
            raise InvalidArgumentError("smoothing sigmas must be >= 0")
        if not 0 < self.step_scale <= 2:
            raise InvalidArgumentError(f"step_scale must lie in (0, 2], got {self.step_scale}")
        if self.convergence_tol < 0:
            raise InvalidArgumentError("convergence_tol must be >= 0")
        if self.image_smoothing_sigma < 0 or self.force_floor < 0:
            raise InvalidArgumentError("image_smoothing_sigma and force_floor must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iters_per_level"] = list(self.iters_per_level)
        return d


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """``forward`` pulls ``a`` onto ``b`` (``warp(a, forward) ~ b``);
    ``backward`` pulls ``b`` onto ``a``."""

    forward: DisplacementField3
    backward: DisplacementField3
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.forward, self.backward))


# --- pyramid helpers -----------------------------------------------------------

def downsample(data: np.ndarray) -> np.ndarray:
    """2x2x2 block average; odd axes are padded by edge replication."""
    pad = [(0, n % 2) for n in data.shape]
    if any(p[1] for p in pad):
        data = np.pad(data, pad, mode="edge")
    nx, ny, nz = (n // 2 for n in data.shape)
    return data.reshape(nx, 2, ny, 2, nz, 2).mean(axis=(1, 3, 5))


def upsample_field(data: np.ndarray, dims) -> np.ndarray:
    """Trilinear upsampling of a coarse field onto ``dims``, doubled in magnitude."""
    coords = [(np.arange(n, dtype=np.float64) - 0.5) / 2.0 for n in dims]
    pts = np.meshgrid(*coords, indexing="ij")
    return 2.0 * interpolate(data, pts, extend="clamp")


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Images from finest to coarsest; stops early on tiny grids."""
    out = [img]
    for _ in range(levels - 1):
        if min(out[-1].shape) < 2 * _MIN_LEVEL_DIM:
            break
        out.append(downsample(out[-1]))
    return out


def _warp_data(img: np.ndarray, u: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return interpolate(img, [coords[i] + u[..., i] for i in range(3)], extend="clamp")


def _compose_small(h: np.ndarray, step: np.ndarray, coords: np.ndarray) -> np.ndarray:
    return step + interpolate(h, [coords[i] + step[..., i] for i in range(3)], extend="zero")


def _gradient(img: np.ndarray) -> np.ndarray:
    return np.stack(np.gradient(img), axis=-1)


def _ssd(diff: np.ndarray) -> float:
    return float(np.mean(diff * diff))


def _run_level(A, B, ha, hb, iters, p: RegistrationParams):
    """Optimize the two half-fields on one pyramid level.

    Returns the updated half-fields, the SSD trace and the number of accepted
    iterations.
    """
    coords = identity_coords(A.shape)
    wa, wb = _warp_data(A, ha, coords), _warp_data(B, hb, coords)
    diff = wa - wb
    ssd = _ssd(diff)
    trace = [ssd]
    done = 0
    for _ in range(iters):
        grad = 0.5 * (_gradient(wa) + _gradient(wb))
        denom = np.sum(grad * grad, axis=-1) + diff * diff + p.force_floor ** 2
        safe = denom > 1e-12
        force = np.zeros_like(grad)
        force[safe] = (diff[safe] / denom[safe])[:, None] * grad[safe]
        # a moves against the mismatch gradient, b along it
        force = smooth_field(0.5 * force, p.update_smoothing_sigma)

        scale = p.step_scale
        accepted = False
        for _ in range(_MAX_BACKTRACKS + 1):
            na = smooth_field(_compose_small(ha, -scale * force, coords), p.field_smoothing_sigma)
            nb = smooth_field(_compose_small(hb, scale * force, coords), p.field_smoothing_sigma)
            nwa, nwb = _warp_data(A, na, coords), _warp_data(B, nb, coords)
            ndiff = nwa - nwb
            nssd = _ssd(ndiff)
            if nssd <= ssd:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
        rel = (ssd - nssd) / ssd if ssd > 0 else 0.0
        ha, hb, wa, wb, diff, ssd = na, nb, nwa, nwb, ndiff, nssd
        trace.append(ssd)
        done += 1
        if rel < p.convergence_tol:
            break
    return ha, hb, trace, done


def register_symmetric(a: Volume3, b: Volume3, params: RegistrationParams | None = None) -> RegistrationResult:
    """Register ``a`` and ``b`` through a mid-way space.

    Returns a :class:`RegistrationResult` that unpacks as
    ``(forward, backward)``. ``meta`` holds ``initial_ssd``, ``final_ssd``
    (mid-way, normalized intensities), ``iterations`` per level (coarsest
    first), ``ssd_trace`` per level, ``folding`` (voxels with Jacobian <= 0
    across both fields) and ``inverse`` convergence info.
    """
    p = params or RegistrationParams()
    grid = check_same_grid(a, b)
    A = minmax_normalize(a.data, what="first input volume")
    B = minmax_normalize(b.data, what="second input volume")
    if p.image_smoothing_sigma > 0:
        A = ndimage.gaussian_filter(A, p.image_smoothing_sigma, mode="nearest")
        B = ndimage.gaussian_filter(B, p.image_smoothing_sigma, mode="nearest")

    pyr_a, pyr_b = _pyramid(A, p.levels), _pyramid(B, p.levels)
    n_built = len(pyr_a)
    # iters_per_level is coarsest-first; levels that cannot be built are skipped
    schedule = list(p.iters_per_level)[p.levels - n_built:]
    iterations = [0] * (p.levels - n_built)
    traces: list[list[float]] = [[] for _ in range(p.levels - n_built)]

    ha = hb = None
    for level, iters in zip(range(n_built - 1, -1, -1), schedule):
        La, Lb = pyr_a[level], pyr_b[level]
        if ha is None:
            ha = np.zeros(La.shape + (3,))
            hb = np.zeros(La.shape + (3,))
        else:
            ha = upsample_field(ha, La.shape)
            hb = upsample_field(hb, La.shape)
        ha, hb, trace, done = _run_level(La, Lb, ha, hb, iters, p)
        iterations.append(done)
        traces.append(trace)
        log.debug("level %d: %d iterations, ssd %.6g -> %.6g", level, done, trace[0], trace[-1])

    half_a = DisplacementField3(grid, ha)
    half_b = DisplacementField3(grid, hb)
    inv_a = invert(half_a, p.inverse_iters, p.inverse_tol)
    inv_b = invert(half_b, p.inverse_iters, p.inverse_tol)
    forward = compose(half_a, inv_b)
    backward = compose(half_b, inv_a)
    folding = jacobian_map(forward).folding_count + jacobian_map(backward).folding_count

    initial = float(np.mean((A - B) ** 2))
    meta = {
        "initial_ssd": initial,
        "final_ssd": traces[-1][-1] if traces[-1] else initial,
        "iterations": iterations,
        "ssd_trace": traces,
        "folding": folding,
        "inverse": {"a": dict(inv_a.meta), "b": dict(inv_b.meta)},
    }
    return RegistrationResult(forward, backward, meta)


def check_inverse_consistency(forward: DisplacementField3, backward: DisplacementField3) -> float:
    """Mean ``|compose(forward, backward)(x)|`` over voxels whose sample point
    ``x + backward(x)`` stays inside the grid."""
    check_same_grid(forward, backward)
    resid = compose(forward, backward).magnitude()
    coords = identity_coords(forward.grid.dims)
    inside = np.ones(forward.grid.dims, dtype=bool)
    for i, n in enumerate(forward.grid.dims):
        pos = coords[i] + backward.data[..., i]
        inside &= (pos >= 0) & (pos <= n - 1)
    if not inside.any():
        return float(resid.mean())
    return float(resid[inside].mean())
