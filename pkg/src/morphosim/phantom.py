"""Synthetic longitudinal brain phantoms with known deformations.

Each phantom is a set of concentric ellipsoidal shells: a dark ventricle
cavity, graded white matter, a cortical ring, then background. Every shell
boundary is a level set of one normalized radius ``rho`` (``rho = 1`` is the
outer brain surface of the baseline anatomy), so atrophy can be written as
a monotone 1D map of ``rho`` and each time-point is rendered analytically by
pulling the baseline intensity profile back through the accumulated map.

The first scan ``a`` already carries ``prior_intervals`` steps of the
subject's atrophy; ``b`` and ``c`` add one step each.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deformation import DisplacementField3, jacobian_map
from .errors import InvalidArgumentError
from .registration import RegistrationParams
from .simulation import TemplateRecord, build_template
from .volume import Grid3, Mask3, Volume3

ARCHETYPES = ("ventricle_expansion", "cortical_thinning")

# baseline anatomy, in normalized radius units
VENTRICLE_RHO = 0.30
WHITE_RHO = 0.70
OUTER_RHO = 1.0
# brain semi-axes as a fraction of the grid extent
RADII_FRACTION = (0.36, 0.40, 0.34)
CSF, WM_INNER, WM_OUTER, GM_INNER, GM_OUTER = 0.20, 0.95, 0.80, 0.60, 0.45
EDGE_VOXELS = 0.6
CORTEX_TAPER = 0.15

_RHO = np.linspace(0.0, 2.5, 50001)


@dataclass(frozen=True)
class PhantomSpec:
    grid: Grid3 = Grid3((64, 64, 64), (2.0, 2.0, 2.0))
    archetype: str = "ventricle_expansion"
    rate: float = 0.05
    seed: int = 0
    noise_sigma: float = 0.02
    subject_id: str = "sub-01"
    prior_intervals: int = 2
    shape_jitter: float = 0.03
    center_jitter: float = 1.0
    ventricle_jitter: float = 0.08

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise InvalidArgumentError(f"archetype must be one of {ARCHETYPES}, got {self.archetype!r}")
        if not 0.0 <= self.rate <= 0.3:
            raise InvalidArgumentError(f"rate must lie in [0, 0.3], got {self.rate}")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be >= 0")
        if min(self.grid.dims) < 16:
            raise InvalidArgumentError(f"phantom grid must be at least 16 voxels per axis, got {self.grid.dims}")
        if self.prior_intervals < 0:
            raise InvalidArgumentError("prior_intervals must be >= 0")


@dataclass(frozen=True)
class Anatomy:
    center: np.ndarray
    radii: np.ndarray
    ventricle: float

    @classmethod
    def canonical(cls, grid: Grid3) -> "Anatomy":
        dims = np.array(grid.dims, dtype=np.float64)
        return cls((dims - 1) / 2, dims * np.array(RADII_FRACTION), VENTRICLE_RHO)

    @classmethod
    def jittered(cls, spec: PhantomSpec, rng: np.random.Generator) -> "Anatomy":
        base = cls.canonical(spec.grid)
        scale = 1 + rng.uniform(-spec.shape_jitter, spec.shape_jitter, 3)
        shift = rng.uniform(-spec.center_jitter, spec.center_jitter, 3)
        vent = VENTRICLE_RHO * (1 + rng.uniform(-spec.ventricle_jitter, spec.ventricle_jitter))
        return cls(base.center + shift, base.radii * scale, vent)

    def rho(self, grid: Grid3) -> tuple[np.ndarray, np.ndarray]:
        """Normalized radius per voxel and offsets from the center, shape (3, ...)."""
        offs = np.indices(grid.dims, dtype=np.float64) - self.center[:, None, None, None]
        rho = np.sqrt(np.sum((offs / self.radii[:, None, None, None]) ** 2, axis=0))
        return rho, offs

    def profile(self, rho: np.ndarray, edge: float) -> np.ndarray:
        """Noise-free intensity of the baseline anatomy at normalized radius ``rho``."""
        def step(at):
            return 0.5 * (1 + np.tanh((rho - at) / edge))

        t_wm = np.clip((rho - self.ventricle) / (WHITE_RHO - self.ventricle), 0, 1)
        t_gm = np.clip((rho - WHITE_RHO) / (OUTER_RHO - WHITE_RHO), 0, 1)
        wm = WM_INNER + (WM_OUTER - WM_INNER) * t_wm
        gm = GM_INNER + (GM_OUTER - GM_INNER) * t_gm
        return (CSF + (wm - CSF) * step(self.ventricle)
                + (gm - wm) * step(WHITE_RHO) - gm * step(OUTER_RHO))


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3 - 2 * t)


def atrophy_step(archetype: str, rate: float, state: dict) -> tuple[np.ndarray, dict]:
    """One interval of atrophy as a forward radial map over ``_RHO``.

    ``state`` holds the current ventricle and outer-cortex radii; the updated
    state is returned with the map.
    """
    r = _RHO
    vent, outer = state["ventricle"], state["outer"]
    if archetype == "ventricle_expansion":
        s = (1.0 + rate) ** (1.0 / 3.0)
        shift = np.where(r <= vent, (s - 1) * r,
                         (s - 1) * vent * (1 - _smoothstep((r - vent) / (OUTER_RHO - vent))))
        return r + shift, {"ventricle": vent * s, "outer": outer}
    new_outer = (WHITE_RHO ** 3 + (1.0 - rate) * (outer ** 3 - WHITE_RHO ** 3)) ** (1.0 / 3.0)
    delta = new_outer - outer
    shift = np.where(r <= outer, delta * _smoothstep((r - WHITE_RHO) / (outer - WHITE_RHO)),
                     delta * (1 - _smoothstep((r - outer) / CORTEX_TAPER)))
    return r + shift, {"ventricle": vent, "outer": new_outer}


def _inverse(forward: np.ndarray) -> np.ndarray:
    return np.interp(_RHO, forward, _RHO)


def _radial_field(rho, offs, inv_map, grid) -> DisplacementField3:
    ratio = np.empty_like(_RHO)
    ratio[1:] = inv_map[1:] / _RHO[1:]
    ratio[0] = ratio[1]
    scale = np.interp(rho, _RHO, ratio) - 1.0
    return DisplacementField3(grid, np.moveaxis(offs * scale, 0, -1))


def phantom_atlas(grid: Grid3) -> Volume3:
    """Noise-free canonical anatomy without atrophy."""
    anat = Anatomy.canonical(grid)
    rho, _ = anat.rho(grid)
    return Volume3(grid, anat.profile(rho, EDGE_VOXELS / anat.radii.min()))


def atlas_support(grid: Grid3) -> Mask3:
    """Brain region (``rho <= 1``) of the canonical anatomy."""
    anat = Anatomy.canonical(grid)
    rho, _ = anat.rho(grid)
    return Mask3(grid, rho <= OUTER_RHO)


def render_phantom(spec: PhantomSpec) -> dict:
    """Noise-free and noisy volumes plus analytic fields, without registration."""
    rng = np.random.default_rng(spec.seed)
    anat = Anatomy.jittered(spec, rng)
    grid = spec.grid
    edge = EDGE_VOXELS / anat.radii.min()
    rho, offs = anat.rho(grid)

    state = {"ventricle": anat.ventricle, "outer": OUTER_RHO}
    pullback = _RHO.copy()  # current rho -> baseline rho
    n_steps = spec.prior_intervals + 2
    clean, fields, cavity = [], [], []
    steps = []
    for t in range(n_steps + 1):
        if t >= spec.prior_intervals:
            base_rho = np.interp(rho, _RHO, pullback)
            clean.append(anat.profile(base_rho, edge))
            cavity.append(base_rho < anat.ventricle)
            if t > spec.prior_intervals:
                fields.append(_radial_field(rho, offs, _inverse(steps[-1]), grid))
        if t == n_steps:
            break
        fwd, state = atrophy_step(spec.archetype, spec.rate, state)
        steps.append(fwd)
        pullback = np.interp(_inverse(fwd), _RHO, pullback)

    noisy = [c + rng.normal(0.0, spec.noise_sigma, c.shape) if spec.noise_sigma > 0 else c for c in clean]

    # analytic atlas -> time-b pull-back (ignores the ventricle-size jitter)
    canon = Anatomy.canonical(grid)
    base_b = np.interp(rho, _RHO, _pullback_at(spec, anat, spec.prior_intervals + 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, base_b / np.where(rho > 0, rho, 1.0), 1.0)
    src = canon.center[:, None, None, None] + offs / anat.radii[:, None, None, None] \
        * canon.radii[:, None, None, None] * scale
    t_mb = DisplacementField3(grid, np.moveaxis(src - np.indices(grid.dims), 0, -1))

    support_b = np.interp(rho, _RHO, _pullback_at(spec, anat, spec.prior_intervals + 1)) <= OUTER_RHO
    return {
        "anatomy": anat,
        "clean": [Volume3(grid, c) for c in clean],
        "volumes": [Volume3(grid, v) for v in noisy],
        "truth_ab": fields[0],
        "truth_bc": fields[1],
        "truth_Mb": t_mb,
        "cavity": cavity,
        "support_b": Mask3(grid, support_b),
    }


def _pullback_at(spec: PhantomSpec, anat: Anatomy, n: int) -> np.ndarray:
    state = {"ventricle": anat.ventricle, "outer": OUTER_RHO}
    pullback = _RHO.copy()
    for _ in range(n):
        fwd, state = atrophy_step(spec.archetype, spec.rate, state)
        pullback = np.interp(_inverse(fwd), _RHO, pullback)
    return pullback


def generate_phantom(spec: PhantomSpec, atlas: Volume3 | None = None,
                     params: RegistrationParams | None = None, register: bool = True) -> TemplateRecord:
    """Build a phantom subject as a :class:`TemplateRecord`.

    With ``register=True`` the transforms come from symmetric registration
    (against ``atlas``, default :func:`phantom_atlas`); otherwise the
    analytic fields are used directly. The analytic fields are always kept
    in ``meta["truth"]``.
    """
    r = render_phantom(spec)
    vols = tuple(r["volumes"])
    meta = {
        "archetype": spec.archetype,
        "rate": spec.rate,
        "seed": spec.seed,
        "truth": {"t_ab": r["truth_ab"], "t_bc": r["truth_bc"], "t_Mb": r["truth_Mb"]},
        "clean": tuple(r["clean"]),
        "cavity_voxels": tuple(int(c.sum()) for c in r["cavity"]),
        "fields": "registered" if register else "analytic",
    }
    if register:
        return build_template(spec.subject_id, vols, atlas if atlas is not None else phantom_atlas(spec.grid),
                              params, meta=meta)
    return TemplateRecord(spec.subject_id, vols, r["truth_ab"], r["truth_bc"], r["truth_Mb"],
                          jacobian_map(r["truth_ab"]), jacobian_map(r["truth_Mb"]), meta=meta)


def phantom_population(n_subjects: int = 20, grid: Grid3 | None = None, seed: int = 0,
                       rate_range=(0.02, 0.10), noise_sigma: float = 0.02,
                       prior_intervals: int = 2) -> list[PhantomSpec]:
    """Two interleaved archetype groups with rates on a shuffled uniform grid."""
    if n_subjects < 2:
        raise InvalidArgumentError("a phantom population needs at least two subjects")
    grid = grid or Grid3((64, 64, 64), (2.0, 2.0, 2.0))
    children = np.random.SeedSequence(seed).spawn(n_subjects + 1)
    rate_rng = np.random.default_rng(children[0])
    counts = [(n_subjects + 1) // 2, n_subjects // 2]
    rates = [list(rate_rng.permutation(np.linspace(*rate_range, c))) for c in counts]
    subject_seeds = children[1:]
    specs = []
    width = max(2, len(str(n_subjects)))
    for i in range(n_subjects):
        group = i % 2
        specs.append(PhantomSpec(
            grid=grid,
            archetype=ARCHETYPES[group],
            rate=float(rates[group][i // 2]),
            seed=int(subject_seeds[i].generate_state(1)[0]),
            noise_sigma=noise_sigma,
            subject_id=f"sub-{i + 1:0{width}d}",
            prior_intervals=prior_intervals,
        ))
    return specs
