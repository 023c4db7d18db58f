"""Leave-one-out evaluation over a template population.

Every subject in turn is removed from the population and its third scan is
predicted from its first two. Three distances are recorded per fold:

* ``p_b``: prediction vs. the real follow-up,
* ``p_ra``: prediction vs. the second scan registered onto the follow-up,
* ``real``: that registered scan vs. the real follow-up (registration floor).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .deformation import warp
from .errors import InvalidArgumentError
from .morphometry import intensity_distance
from .simulation import (MODES, DistanceTable, SimulationConfig, TemplateRecord, normalize_distances,
                         simulate_followup)
from .volume import Mask3, Volume3, check_same_grid, dilate_mask

log = logging.getLogger(__name__)

LOO_COLUMNS = ("subject_id", "mode", "p_b", "p_ra", "real", "p_b_rescaled", "p_ra_rescaled", "sort_rank")


def evaluate_pair(predicted: Volume3, real_c: Volume3, registered_b: Volume3, mask: Mask3):
    """Return ``(p_b, p_ra, real)`` as masked normalized intensity distances."""
    check_same_grid(predicted, real_c, registered_b, mask)
    return (intensity_distance(predicted, real_c, mask),
            intensity_distance(predicted, registered_b, mask),
            intensity_distance(registered_b, real_c, mask))


@dataclass
class FoldResult:
    subject_id: str
    mode: str
    p_b: float
    p_ra: float
    real: float
    table: DistanceTable
    template_ids: tuple[str, ...]

    @property
    def neighbors(self) -> list[str]:
        return [self.table.subject_ids[i] for i in self.table.selected]


def rescale(values) -> np.ndarray:
    """Zero-mean rescaling into [-1, 1] used for the comparison plots."""
    return normalize_distances(values)


@dataclass
class LooResult:
    subject_ids: tuple[str, ...]
    modes: tuple[str, ...]
    folds: dict = field(default_factory=dict)  # (subject_id, mode) -> FoldResult
    archetypes: dict = field(default_factory=dict)

    def column(self, mode: str, name: str) -> np.ndarray:
        return np.array([getattr(self.folds[(s, mode)], name) for s in self.subject_ids])

    def rescaled(self, mode: str, name: str) -> np.ndarray:
        return rescale(self.column(mode, name))

    @property
    def sort_mode(self) -> str:
        return "intensity" if "intensity" in self.modes else self.modes[0]

    def sort_order(self, name: str = "p_b") -> list[int]:
        """Subject indices ordered by the ``sort_mode`` distance ``name``."""
        vals = self.column(self.sort_mode, name)
        return sorted(range(len(self.subject_ids)), key=lambda i: (vals[i], self.subject_ids[i]))

    def sort_ranks(self, name: str = "p_b") -> np.ndarray:
        ranks = np.empty(len(self.subject_ids), dtype=int)
        ranks[self.sort_order(name)] = np.arange(len(self.subject_ids))
        return ranks

    def purity(self, mode: str) -> float:
        """Mean fraction of selected neighbours sharing the target's archetype."""
        if not self.archetypes:
            raise InvalidArgumentError("no archetype labels were recorded for this population")
        fr = []
        for s in self.subject_ids:
            nb = self.folds[(s, mode)].neighbors
            fr.append(np.mean([self.archetypes[n] == self.archetypes[s] for n in nb]))
        return float(np.mean(fr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOO_COLUMNS)
        ranks = self.sort_ranks("p_b")
        scaled = {m: (self.rescaled(m, "p_b"), self.rescaled(m, "p_ra")) for m in self.modes}
        for i, s in enumerate(self.subject_ids):
            for m in self.modes:
                f = self.folds[(s, m)]
                w.writerow([s, m, repr(f.p_b), repr(f.p_ra), repr(f.real),
                            repr(float(scaled[m][0][i])), repr(float(scaled[m][1][i])), int(ranks[i])])
        return buf.getvalue()

    def plot_data(self) -> dict[str, str]:
        """Whitespace-separated tables for plotting, keyed by file name.

        ``distances.dat`` holds the raw P-B / P-rA / REAL curves per mode;
        ``sorted_p_b.dat`` and ``sorted_p_ra.dat`` hold the rescaled columns
        ordered by the reference (intensity) mode.
        """
        out = {}
        lines = ["# subject " + " ".join(f"{m}_p_b {m}_p_ra {m}_real" for m in self.modes)]
        for s in self.subject_ids:
            vals = []
            for m in self.modes:
                f = self.folds[(s, m)]
                vals += [f.p_b, f.p_ra, f.real]
            lines.append(s + " " + " ".join(f"{v:.10g}" for v in vals))
        out["distances.dat"] = "\n".join(lines) + "\n"
        for name in ("p_b", "p_ra"):
            order = self.sort_order(name)
            cols = {m: self.rescaled(m, name) for m in self.modes}
            lines = ["# rank subject " + " ".join(self.modes)]
            for rank, i in enumerate(order):
                lines.append(f"{rank} {self.subject_ids[i]} " + " ".join(f"{cols[m][i]:.10g}" for m in self.modes))
            out[f"sorted_{name}.dat"] = "\n".join(lines) + "\n"
        return out


def run_loo(templates: Sequence[TemplateRecord], cfg: SimulationConfig | None = None,
            modes: Sequence[str] = MODES, atlas: Volume3 | None = None, mask: Mask3 | None = None,
            progress=None) -> LooResult:
    """Leave-one-out simulation of every subject under each weighting mode.

    ``mask`` is the undilated brain mask; distances (for weighting and for
    evaluation) use it dilated by ``cfg.dilation_radius``.
    """
    cfg = cfg or SimulationConfig()
    templates = sorted(templates, key=lambda t: t.subject_id)
    if len(templates) < 3:
        raise InvalidArgumentError(f"leave-one-out needs at least 3 templates, got {len(templates)}")
    if atlas is None or mask is None:
        raise InvalidArgumentError("run_loo needs the atlas volume and the brain mask")
    ids = [t.subject_id for t in templates]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("subject ids must be unique")
    for m in modes:
        if m not in MODES:
            raise InvalidArgumentError(f"unknown weighting mode {m!r}")
    eval_mask = dilate_mask(mask, cfg.dilation_radius)

    result = LooResult(tuple(ids), tuple(modes))
    for t in templates:
        if "archetype" in t.meta:
            result.archetypes[t.subject_id] = t.meta["archetype"]
    if len(result.archetypes) != len(templates):
        result.archetypes = {}

    for n, target in enumerate(templates):
        pool = [t for t in templates if t is not target]
        i_a, i_b, i_c = target.volumes
        registered_b = warp(i_b, target.t_bc)
        for m in modes:
            sim = simulate_followup((i_a, i_b), pool, atlas, mask, cfg, m,
                                    target_fields=(target.t_ab, target.t_Mb))
            p_b, p_ra, real = evaluate_pair(sim.predicted, i_c, registered_b, eval_mask)
            result.folds[(target.subject_id, m)] = FoldResult(
                target.subject_id, m, p_b, p_ra, real, sim.table, tuple(t.subject_id for t in pool))
        if progress is not None:
            progress(n + 1, len(templates), target.subject_id)
    return result
