"""Batch command-line front end.

Exit statuses: 0 success, 2 I/O or format error, 3 grid mismatch,
4 degenerate input, 5 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cache import RegistrationCache
from .config import PipelineConfig, parse_override
from .deformation import jacobian_map
from .errors import (ConfigError, DegenerateInputError, DimensionError,
                     InvalidArgumentError, MorphosimError)
from .harness import run_loo
from .morphometry import VbmMap, intensity_distance, vbm_distance
from .nifti import read_field, read_mask, read_nifti, write_field, write_mask, write_nifti
from .phantom import atlas_support, generate_phantom, phantom_atlas, phantom_population, render_phantom
from .registration import check_inverse_consistency, register_symmetric
from .simulation import TemplateRecord, simulate_followup

log = logging.getLogger("morphosim")

EXIT_OK, EXIT_IO, EXIT_DIM, EXIT_DEGENERATE, EXIT_CONFIG = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message, status):
        super().__init__(message)
        self.status = status


def _status_for(exc: BaseException) -> int:
    if isinstance(exc, DimensionError):
        return EXIT_DIM
    if isinstance(exc, DegenerateInputError):
        return EXIT_DEGENERATE
    if isinstance(exc, (ConfigError, InvalidArgumentError)):
        return EXIT_CONFIG
    return EXIT_IO


def _with_file(path, fn, *args):
    """Call ``fn`` and prefix any toolkit error with the offending file."""
    try:
        return fn(*args)
    except MorphosimError as exc:
        raise CliError(f"{path}: {exc}" if str(path) not in str(exc) else str(exc), _status_for(exc)) from exc


def _load_config(args) -> PipelineConfig:
    overrides = [parse_override(o) for o in args.set or []]
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "alpha", None) is not None:
        flags.setdefault("simulation", {})["alpha"] = args.alpha
    if getattr(args, "k", None) is not None:
        flags.setdefault("simulation", {})["k"] = args.k
    if flags:
        overrides.append(flags)
    return PipelineConfig.load(args.config, overrides)


def _prepare_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"{path}: output directory is not writable ({exc.strerror})", EXIT_IO) from exc
    return path


def _prefix_paths(prefix: str):
    p = Path(prefix)
    _prepare_dir(p.parent if str(p.parent) else Path("."))
    return lambda suffix: p.parent / f"{p.name}{suffix}"


def _write_text(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"{path}: cannot write ({exc.strerror})", EXIT_IO) from exc


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _check_grids(named):
    (n0, v0), rest = named[0], named[1:]
    for name, v in rest:
        if not v0.grid.matches(v.grid):
            raise CliError(f"grid mismatch: {n0} is {v0.grid}, {name} is {v.grid}", EXIT_DIM)


# --- subcommands -------------------------------------------------------------------

def cmd_register(args) -> int:
    cfg = _load_config(args)
    fixed = _with_file(args.fixed, read_nifti, args.fixed)
    moving = _with_file(args.moving, read_nifti, args.moving)
    _check_grids([(args.fixed, fixed), (args.moving, moving)])
    try:
        res = register_symmetric(moving, fixed, cfg.registration())
    except DegenerateInputError as exc:
        raise CliError(f"{args.moving} / {args.fixed}: {exc}", EXIT_DEGENERATE) from exc
    out = _prefix_paths(args.out)
    write_field(res.forward, out("_forward.nii"))
    write_field(res.backward, out("_backward.nii"))
    jac = jacobian_map(res.forward)
    write_nifti(jac.as_volume(), out("_jacobian.nii"))
    report = {
        "moving": str(args.moving),
        "fixed": str(args.fixed),
        "grid": str(fixed.grid),
        "initial_ssd": res.meta["initial_ssd"],
        "final_ssd": res.meta["final_ssd"],
        "iterations": res.meta["iterations"],
        "inverse_consistency": check_inverse_consistency(res.forward, res.backward),
        "folding": res.meta["folding"],
        "mean_forward_magnitude": res.forward.mean_magnitude(),
        "jacobian_min": float(jac.data.min()),
        "jacobian_max": float(jac.data.max()),
    }
    _write_text(out("_report.json"), _json(report))
    _write_text(out("_config.yaml"), cfg.dump())
    print(_json(report), end="")
    return EXIT_OK


def cmd_jacobian(args) -> int:
    f = _with_file(args.field, read_field, args.field)
    jac = jacobian_map(f)
    out = Path(args.out)
    _prepare_dir(out.parent)
    write_nifti(jac.as_volume(), out)
    stats = {"folding": jac.folding_count, "min": float(jac.data.min()),
             "max": float(jac.data.max()), "mean": float(jac.data.mean())}
    print(_json(stats), end="")
    return EXIT_OK


def cmd_distance(args) -> int:
    a = _with_file(args.a, read_nifti, args.a)
    b = _with_file(args.b, read_nifti, args.b)
    mask = _with_file(args.mask, read_mask, args.mask)
    _check_grids([(args.a, a), (args.b, b), (args.mask, mask)])
    try:
        if args.kind == "vbm":
            d = vbm_distance(VbmMap(a.grid, a.data), VbmMap(b.grid, b.data), mask)
        else:
            d = intensity_distance(a, b, mask)
    except MorphosimError as exc:
        raise CliError(str(exc), _status_for(exc)) from exc
    print(_json({"kind": args.kind, "distance": d}), end="")
    return EXIT_OK


def read_manifest(path) -> list[dict]:
    """Rows of ``id,path_a,path_b,path_c`` with paths resolved against the manifest."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"{path}: cannot read manifest ({exc.strerror})", EXIT_IO) from exc
    need = {"id", "path_a", "path_b", "path_c"}
    if not rows or not need <= set(rows[0]):
        raise CliError(f"{path}: manifest must have columns {sorted(need)}", EXIT_IO)
    out = []
    for n, row in enumerate(rows, start=2):
        entry = {"id": row["id"], "line": n, "extra": {k: v for k, v in row.items() if k not in need}}
        for key in ("path_a", "path_b", "path_c"):
            p = Path(row[key])
            entry[key] = p if p.is_absolute() else path.parent / p
        out.append(entry)
    return out


def _load_templates(manifest, atlas, cache, params, manifest_path) -> list[TemplateRecord]:
    templates = []
    for row in manifest:
        vols = []
        for key in ("path_a", "path_b", "path_c"):
            p = row[key]
            if not p.exists():
                raise CliError(f"{manifest_path}: line {row['line']} (subject {row['id']}): "
                               f"missing file {p}", EXIT_IO)
            vols.append(_with_file(p, read_nifti, p))
        _check_grids([("atlas", atlas)] +
                     [(str(row[k]), v) for k, v in zip(("path_a", "path_b", "path_c"), vols)])
        try:
            t_ab, _ = cache.register(vols[0], vols[1], params)
            t_bc, _ = cache.register(vols[1], vols[2], params)
            t_mb, _ = cache.register(atlas, vols[1], params)
        except DegenerateInputError as exc:
            raise CliError(f"subject {row['id']}: {exc}", EXIT_DEGENERATE) from exc
        templates.append(TemplateRecord(row["id"], tuple(vols), t_ab, t_bc, t_mb,
                                        jacobian_map(t_ab), jacobian_map(t_mb), meta=dict(row["extra"])))
    return templates


def _cache_for(cfg, default_root: Path) -> RegistrationCache:
    root = cfg.tree["paths"]["cache_dir"]
    return RegistrationCache(Path(root) if root else default_root)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    sim_cfg = cfg.simulation()
    params = cfg.registration()
    i_a = _with_file(args.target_a, read_nifti, args.target_a)
    i_b = _with_file(args.target_b, read_nifti, args.target_b)
    atlas = _with_file(args.atlas, read_nifti, args.atlas)
    mask = _with_file(args.mask, read_mask, args.mask)
    _check_grids([(args.target_a, i_a), (args.target_b, i_b), (args.atlas, atlas), (args.mask, mask)])
    out = _prefix_paths(args.out)
    cache = _cache_for(cfg, out("").parent / ".morphosim-cache")
    manifest = read_manifest(args.manifest)
    templates = _load_templates(manifest, atlas, cache, params, args.manifest)
    try:
        t_ab, _ = cache.register(i_a, i_b, params)
        t_mb, _ = cache.register(atlas, i_b, params)
        res = simulate_followup((i_a, i_b), templates, atlas, mask, sim_cfg, args.mode,
                                target_fields=(t_ab, t_mb))
    except MorphosimError as exc:
        raise CliError(str(exc), _status_for(exc)) from exc
    write_nifti(res.predicted, out("_predicted.nii"))
    write_field(res.field, out("_field.nii"))
    _write_text(out("_distances.csv"), res.table.to_csv())
    _write_text(out("_config.yaml"), cfg.dump())
    print(_json({"mode": args.mode, "selected": [res.table.subject_ids[i] for i in res.table.selected],
                 **cache.stats()}), end="")
    return EXIT_OK


def _phantom_specs(cfg: PipelineConfig):
    ph = cfg.tree["phantom"]
    return phantom_population(ph["n_subjects"], cfg.grid(), cfg.seed, (ph["rate_min"], ph["rate_max"]),
                              ph["noise_sigma"], ph["prior_intervals"])


def cmd_phantom(args) -> int:
    cfg = _load_config(args)
    out = _prepare_dir(Path(args.out))
    specs = _phantom_specs(cfg)
    grid = cfg.grid()
    write_nifti(phantom_atlas(grid), out / "atlas.nii")
    write_mask(atlas_support(grid), out / "mask.nii")
    manifest = ["id,path_a,path_b,path_c,archetype,rate"]
    for s in specs:
        vols = render_phantom(s)["volumes"]
        names = [f"{s.subject_id}_{t}.nii" for t in "abc"]
        for v, name in zip(vols, names):
            write_nifti(v, out / name)
        manifest.append(",".join([s.subject_id, *names, s.archetype, repr(s.rate)]))
    _write_text(out / "manifest.csv", "\n".join(manifest) + "\n")
    _write_text(out / "config.yaml", cfg.dump())
    print(_json({"subjects": len(specs), "out": str(out)}), end="")
    return EXIT_OK


def cmd_loo(args) -> int:
    cfg = _load_config(args)
    sim_cfg = cfg.simulation()
    out_csv = Path(args.out)
    out_dir = _prepare_dir(out_csv.parent if str(out_csv.parent) else Path("."))
    stem = out_csv.stem

    def progress(i, n, sid):
        log.info("fold %d/%d (%s) done", i, n, sid)

    try:
        if args.manifest:
            mdir = Path(args.manifest).parent
            atlas_path = Path(args.atlas) if args.atlas else mdir / "atlas.nii"
            mask_path = Path(args.mask) if args.mask else mdir / "mask.nii"
            atlas = _with_file(atlas_path, read_nifti, atlas_path)
            mask = _with_file(mask_path, read_mask, mask_path)
            _check_grids([(atlas_path, atlas), (mask_path, mask)])
            cache = _cache_for(cfg, out_dir / ".morphosim-cache")
            templates = _load_templates(read_manifest(args.manifest), atlas, cache,
                                        cfg.registration(), args.manifest)
            for t in templates:
                if "archetype" in t.meta and not t.meta["archetype"]:
                    del t.meta["archetype"]
        else:
            specs = _phantom_specs(cfg)
            grid = cfg.grid()
            atlas, mask = phantom_atlas(grid), atlas_support(grid)
            templates = []
            for s in specs:
                templates.append(generate_phantom(s, atlas, cfg.registration()))
                log.info("phantom %s registered", s.subject_id)
        result = run_loo(templates, sim_cfg, cfg.modes, atlas, mask, progress=progress)
    except MorphosimError as exc:
        raise CliError(str(exc), _status_for(exc)) from exc

    _write_text(out_csv, result.to_csv())
    for name, text in result.plot_data().items():
        _write_text(out_dir / f"{stem}_{name}", text)
    folds = _prepare_dir(out_dir / f"{stem}_folds")
    for (sid, mode), fold in sorted(result.folds.items()):
        _write_text(folds / f"{sid}_{mode}.csv", fold.table.to_csv())
    summary = {"subjects": len(result.subject_ids), "modes": list(result.modes)}
    if result.archetypes:
        summary["purity"] = {m: result.purity(m) for m in result.modes}
    vbm = [m for m in ("long", "cross", "combined") if m in result.modes]
    if vbm and "intensity" in result.modes:
        best = np.minimum.reduce([result.column(m, "p_ra") for m in vbm])
        summary["fraction_morphometry_better_p_ra"] = float(np.mean(best < result.column("intensity", "p_ra")))
    _write_text(out_dir / f"{stem}_summary.json", _json(summary))
    _write_text(out_dir / f"{stem}_config.yaml", cfg.dump())
    print(_json(summary), end="")
    return EXIT_OK


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphosim", description=(
        "Simulate follow-up MR volumes from VBM-matched template deformations."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML pipeline config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value, e.g. simulation.k=3 (repeatable)")
        sp.add_argument("--seed", type=int)
        return sp

    sp = with_config(sub.add_parser("register", help="symmetric registration of two volumes"))
    sp.add_argument("fixed")
    sp.add_argument("moving")
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_register)

    sp = sub.add_parser("jacobian", help="Jacobian determinant map of a displacement field")
    sp.add_argument("field")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_jacobian)

    sp = sub.add_parser("distance", help="masked VBM or intensity distance")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--mask", required=True)
    sp.add_argument("--kind", choices=("vbm", "intensity"), default="vbm")
    sp.set_defaults(func=cmd_distance)

    sp = with_config(sub.add_parser("simulate", help="predict a follow-up volume"))
    sp.add_argument("--target-a", required=True)
    sp.add_argument("--target-b", required=True)
    sp.add_argument("--manifest", required=True, help="CSV with id,path_a,path_b,path_c")
    sp.add_argument("--atlas", required=True)
    sp.add_argument("--mask", required=True)
    sp.add_argument("--mode", choices=("long", "cross", "combined", "intensity"), default="combined")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("phantom", help="write a synthetic phantom population"))
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_phantom)

    sp = with_config(sub.add_parser("loo", help="leave-one-out evaluation"))
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="template manifest CSV")
    src.add_argument("--phantoms", action="store_true", help="generate the phantom population from the config")
    sp.add_argument("--atlas", help="atlas volume (default: atlas.nii beside the manifest)")
    sp.add_argument("--mask", help="brain mask (default: mask.nii beside the manifest)")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--k", type=int)
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.set_defaults(func=cmd_loo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"morphosim {args.command}: {exc}", file=sys.stderr)
        return exc.status
    except ConfigError as exc:
        print(f"morphosim {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MorphosimError as exc:
        print(f"morphosim {args.command}: {exc}", file=sys.stderr)
        return _status_for(exc)


if __name__ == "__main__":
    sys.exit(main())
