"""Voxel-based morphometry maps and the masked distances between them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .volume import Grid3, Mask3, Volume3, check_same_grid, minmax_normalize


@dataclass(frozen=True, eq=False)
class VbmMap:
    """Per-voxel Jacobian determinant of a displacement field."""

    grid: Grid3
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.shape != self.grid.dims:
            raise InvalidArgumentError(f"VBM map shape {data.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("VBM map contains NaN or Inf")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def folding_count(self) -> int:
        """Voxels whose determinant is <= 0, i.e. where the transform folds."""
        return int(np.count_nonzero(self.data <= 0))

    def as_volume(self) -> Volume3:
        return Volume3(self.grid, self.data)


def _masked_msd(x: np.ndarray, y: np.ndarray, mask: Mask3) -> float:
    sel = mask.data
    diff = x[sel] - y[sel]
    return float(np.dot(diff, diff) / sel.sum())


def vbm_distance(ji: VbmMap, jj: VbmMap, mask: Mask3) -> float:
    """Mean squared difference of two VBM maps over the voxels of ``mask``."""
    check_same_grid(ji, jj, mask)
    mask.require_nonempty()
    return _masked_msd(ji.data, jj.data, mask)


def intensity_distance(a: Volume3, b: Volume3, mask: Mask3) -> float:
    """Masked mean squared difference of min-max normalized intensities.

    Each volume is rescaled to [0, 1] using its own extrema inside ``mask``
    before comparison.
    """
    check_same_grid(a, b, mask)
    mask.require_nonempty()
    na = minmax_normalize(a.data, mask.data, "first volume")
    nb = minmax_normalize(b.data, mask.data, "second volume")
    return _masked_msd(na, nb, mask)
