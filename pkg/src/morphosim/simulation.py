"""Template weighting and follow-up synthesis.

A target subject is matched against a template population through masked
VBM distances (longitudinal and cross-sectional), the distances are
normalized and blended, the ``k`` closest templates are kept, and their
follow-up displacement fields are averaged with Gaussian kernel weights.
The latest target scan resampled through that average is the prediction.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deformation import DisplacementField3, compose, jacobian_map, warp
from .errors import InvalidArgumentError, MorphosimError
from .morphometry import VbmMap, intensity_distance, vbm_distance
from .registration import RegistrationParams, register_symmetric
from .volume import Mask3, Volume3, check_same_grid, dilate_mask

log = logging.getLogger(__name__)

MODES = ("long", "cross", "combined", "intensity")
TRANSPORTS = ("identity", "deformable")


@dataclass(frozen=True, eq=False)
class TemplateRecord:
    """One subject with three serial scans and the transforms derived from them.

    ``t_ab`` and ``t_bc`` pull the earlier scan onto the later one
    (``warp(I_a, t_ab) ~ I_b``); ``t_Mb`` pulls the atlas onto ``I_b``.
    ``meta`` is free-form provenance and is never read by the simulation.
    """

    subject_id: str
    volumes: tuple[Volume3, Volume3, Volume3]
    t_ab: DisplacementField3
    t_bc: DisplacementField3
    t_Mb: DisplacementField3
    j_ab: VbmMap
    j_Mb: VbmMap
    months: tuple[float, float, float] = (0.0, 12.0, 24.0)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.volumes) != 3:
            raise InvalidArgumentError(f"{self.subject_id}: need exactly three time-point volumes")
        check_same_grid(*self.volumes, self.t_ab, self.t_bc, self.t_Mb, self.j_ab, self.j_Mb)
        a, b, c = self.months
        if not a < b < c:
            raise InvalidArgumentError(f"{self.subject_id}: time-points must satisfy a < b < c, got {self.months}")

    @property
    def grid(self):
        return self.volumes[0].grid

    def check_intervals(self, tolerance_months: float = 3.0) -> None:
        a, b, c = self.months
        if abs((b - a) - (c - b)) > tolerance_months:
            raise InvalidArgumentError(
                f"{self.subject_id}: intervals {b - a:g} and {c - b:g} months differ by more "
                f"than {tolerance_months:g}")


def build_template(subject_id: str, volumes, atlas: Volume3, params: RegistrationParams | None = None,
                   months=(0.0, 12.0, 24.0), meta: dict | None = None) -> TemplateRecord:
    """Run the three registrations a template needs and derive its VBM maps."""
    i_a, i_b, i_c = volumes
    try:
        t_ab = register_symmetric(i_a, i_b, params).forward
        t_bc = register_symmetric(i_b, i_c, params).forward
        t_mb = register_symmetric(atlas, i_b, params).forward
    except MorphosimError as exc:
        raise type(exc)(f"subject {subject_id}: {exc}") from exc
    return TemplateRecord(subject_id, (i_a, i_b, i_c), t_ab, t_bc, t_mb,
                          jacobian_map(t_ab), jacobian_map(t_mb), tuple(months), dict(meta or {}))


def default_k(population: int) -> int:
    """A quarter of the population, rounded half up, at least one."""
    return max(1, int(math.floor(population / 4 + 0.5)))


@dataclass(frozen=True)
class SimulationConfig:
    alpha: float = 0.5
    k: int | None = None
    g: float = 0.5
    dilation_radius: int = 3
    transport: str = "identity"
    interval_tolerance_months: float = 3.0
    registration: RegistrationParams = field(default_factory=RegistrationParams)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgumentError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.k is not None and (int(self.k) != self.k or self.k < 1):
            raise InvalidArgumentError(f"k must be an integer >= 1, got {self.k}")
        if not self.g > 0:
            raise InvalidArgumentError(f"g must be > 0, got {self.g}")
        if int(self.dilation_radius) != self.dilation_radius or self.dilation_radius < 0:
            raise InvalidArgumentError(f"dilation_radius must be a non-negative integer")
        if self.transport not in TRANSPORTS:
            raise InvalidArgumentError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    def k_for(self, population: int) -> int:
        return default_k(population) if self.k is None else int(self.k)


# --- distance algebra ------------------------------------------------------------

def normalize_distances(d: Sequence[float]) -> np.ndarray:
    """Center on the mean and divide by the largest absolute deviation.

    The result lies in [-1, 1] and attains at least one endpoint; a constant
    input maps to zeros.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.size < 2:
        raise InvalidArgumentError(f"need at least two distances, got {d.size}")
    dev = d - d.mean()
    span = np.abs(dev).max()
    if span == 0:
        return np.zeros_like(d)
    return dev / span


def combine_distances(d_long_norm, d_cross_norm, alpha: float) -> np.ndarray:
    """Blend ``alpha * long + (1 - alpha) * cross`` elementwise."""
    lo = np.asarray(d_long_norm, dtype=np.float64)
    cr = np.asarray(d_cross_norm, dtype=np.float64)
    if lo.shape != cr.shape:
        raise InvalidArgumentError(f"length mismatch: {lo.shape} vs {cr.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * lo + (1.0 - alpha) * cr


def select_neighbors(d_combined, k: int, ids: Sequence[str] | None = None) -> list[int]:
    """Indices of the ``k`` smallest distances, ties broken by ascending id."""
    d = np.asarray(d_combined, dtype=np.float64)
    n = d.size
    if int(k) != k or not 1 <= k <= n:
        raise InvalidArgumentError(f"k must lie in [1, {n}], got {k}")
    if ids is None:
        ids = [f"{i:09d}" for i in range(n)]
    if len(ids) != n:
        raise InvalidArgumentError("ids and distances differ in length")
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[sorted(range(n), key=lambda i: ids[i])] = np.arange(n)
    order = np.lexsort((id_rank, d))
    return [int(i) for i in order[:k]]


def kernel_weights(d, g: float = 0.5) -> np.ndarray:
    """Normalized Gaussian kernel weights ``exp(-d / g) / sum``.

    Computed relative to ``min(d)``, which leaves the normalized weights
    unchanged and keeps the exponentials bounded for negative distances.
    """
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise InvalidArgumentError("cannot weight an empty selection")
    if not g > 0:
        raise InvalidArgumentError(f"g must be > 0, got {g}")
    w = np.exp(-(d - d.min()) / g)
    return w / w.sum()


def average_followup_field(fields: Sequence[DisplacementField3], d_selected, g: float = 0.5) -> DisplacementField3:
    """Kernel-weighted per-voxel mean of the selected follow-up fields."""
    if len(fields) == 0:
        raise InvalidArgumentError("empty template selection")
    if len(fields) != len(d_selected):
        raise InvalidArgumentError(f"{len(fields)} fields but {len(d_selected)} distances")
    grid = check_same_grid(*fields)
    w = kernel_weights(d_selected, g)
    out = w[0] * fields[0].data
    for wi, f in zip(w[1:], fields[1:]):
        out = out + wi * f.data
    return DisplacementField3(grid, out, {"weights": w.tolist()})


def transport_field(field_bc: DisplacementField3, to_template: DisplacementField3,
                    to_target: DisplacementField3) -> DisplacementField3:
    """Conjugate a template's follow-up field into the target frame.

    ``to_template`` pulls the template scan onto the target
    (``warp(I_template, to_template) ~ I_target``) and ``to_target`` is its
    inverse.
    """
    return compose(to_target, compose(field_bc, to_template))


# --- distance table ----------------------------------------------------------------

CSV_COLUMNS = ("subject_id", "d_long", "d_cross", "d_long_norm", "d_cross_norm",
               "d_combined", "selected", "weight")


@dataclass(frozen=True, eq=False)
class DistanceTable:
    subject_ids: tuple[str, ...]
    d_long: np.ndarray
    d_cross: np.ndarray
    d_long_norm: np.ndarray
    d_cross_norm: np.ndarray
    d_combined: np.ndarray
    selected: tuple[int, ...]
    weights: np.ndarray  # aligned with ``selected``
    mode: str = "combined"

    def weight_column(self) -> np.ndarray:
        col = np.zeros(len(self.subject_ids))
        col[list(self.selected)] = self.weights
        return col

    def rows(self):
        chosen = set(self.selected)
        wcol = self.weight_column()
        for i, sid in enumerate(self.subject_ids):
            yield (sid, self.d_long[i], self.d_cross[i], self.d_long_norm[i], self.d_cross_norm[i],
                   self.d_combined[i], int(i in chosen), wcol[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:6]] + [row[6], repr(float(row[7]))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SimulationResult:
    predicted: Volume3
    field: DisplacementField3
    table: DistanceTable

    def __iter__(self):
        return iter((self.predicted, self.field, self.table))


def distance_table(target_ab: VbmMap | None, target_mb: VbmMap | None, target_b: Volume3,
                   templates: Sequence[TemplateRecord], mask: Mask3, cfg: SimulationConfig,
                   weighting: str, k: int) -> DistanceTable:
    """Score every template against the target and pick the neighbours.

    ``mask`` is used as given (already dilated).
    """
    if weighting not in MODES:
        raise InvalidArgumentError(f"weighting must be one of {MODES}, got {weighting!r}")
    ids = tuple(t.subject_id for t in templates)
    n = len(templates)
    if weighting == "intensity":
        raw = np.array([intensity_distance(target_b, t.volumes[1], mask) for t in templates])
        d_comb = normalize_distances(raw)
        nan = np.full(n, np.nan)
        d_long = d_cross = d_long_n = d_cross_n = nan
    else:
        d_long = np.array([vbm_distance(target_ab, t.j_ab, mask) for t in templates])
        d_cross = np.array([vbm_distance(target_mb, t.j_Mb, mask) for t in templates])
        d_long_n = normalize_distances(d_long)
        d_cross_n = normalize_distances(d_cross)
        alpha = {"long": 1.0, "cross": 0.0, "combined": cfg.alpha}[weighting]
        d_comb = combine_distances(d_long_n, d_cross_n, alpha)
    sel = select_neighbors(d_comb, k, ids)
    w = kernel_weights(d_comb[sel], cfg.g)
    return DistanceTable(ids, d_long, d_cross, d_long_n, d_cross_n, d_comb, tuple(sel), w, weighting)


def simulate_followup(target, templates: Sequence[TemplateRecord], atlas: Volume3, mask: Mask3,
                      cfg: SimulationConfig | None = None, weighting: str = "combined",
                      target_fields: tuple[DisplacementField3, DisplacementField3] | None = None,
                      ) -> SimulationResult:
    """Predict the next scan of ``target = (I_a, I_b)`` from ``templates``.

    ``mask`` is the brain mask; it is dilated by ``cfg.dilation_radius``
    before any distance is taken. ``target_fields`` may carry the target's
    precomputed ``(T_ab, T_Mb)``; since registration is deterministic this
    only saves time.
    """
    cfg = cfg or SimulationConfig()
    if len(target) != 2:
        raise InvalidArgumentError(f"target needs exactly two prior volumes, got {len(target)}")
    i_a, i_b = target
    templates = list(templates)
    if not templates:
        raise InvalidArgumentError("template population is empty")
    check_same_grid(i_a, i_b, atlas, mask, *(t.volumes[0] for t in templates))
    k = cfg.k_for(len(templates))
    if k > len(templates):
        raise InvalidArgumentError(f"k = {k} exceeds the template population size {len(templates)}")
    for t in templates:
        t.check_intervals(cfg.interval_tolerance_months)
    if weighting not in MODES:
        raise InvalidArgumentError(f"weighting must be one of {MODES}, got {weighting!r}")

    region = dilate_mask(mask, cfg.dilation_radius)
    region.require_nonempty()

    j_ab = j_mb = None
    if weighting != "intensity":
        if target_fields is None:
            try:
                t_ab = register_symmetric(i_a, i_b, cfg.registration).forward
                t_mb = register_symmetric(atlas, i_b, cfg.registration).forward
            except MorphosimError as exc:
                raise type(exc)(f"target: {exc}") from exc
        else:
            t_ab, t_mb = target_fields
        j_ab, j_mb = jacobian_map(t_ab), jacobian_map(t_mb)

    if len(templates) == 1:
        # a single template cannot be normalized against anything
        ids = (templates[0].subject_id,)
        d_long = np.array([vbm_distance(j_ab, templates[0].j_ab, region)]) if j_ab is not None else np.full(1, np.nan)
        d_cross = np.array([vbm_distance(j_mb, templates[0].j_Mb, region)]) if j_mb is not None else np.full(1, np.nan)
        zero = np.zeros(1)
        table = DistanceTable(ids, d_long, d_cross, zero, zero, zero, (0,), np.ones(1), weighting)
    else:
        table = distance_table(j_ab, j_mb, i_b, templates, region, cfg, weighting, k)

    chosen = [templates[i] for i in table.selected]
    fields = []
    for t in chosen:
        if cfg.transport == "deformable":
            reg = register_symmetric(t.volumes[1], i_b, cfg.registration)
            fields.append(transport_field(t.t_bc, reg.forward, reg.backward))
        else:
            fields.append(t.t_bc)
    predicted_field = average_followup_field(fields, table.d_combined[list(table.selected)], cfg.g)
    log.debug("selected %s", [t.subject_id for t in chosen])
    return SimulationResult(warp(i_b, predicted_field), predicted_field, table)
