"""Command line entry point: ``stochaeh <verb> ...``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import cell_solver as cs
from .covariogram import AXES, characteristic_lengths, covariance
from .errors import AEHError
from .homogenize import HomogenizedSet, energy_total, homogenize_cell
from .microstructure import (PatternSpec, PointProcessConfig, derive_seed, generate_realization,
                             load_voxel_image, save_voxel_image, volume_fraction)
from .pipeline import StudyConfig, emit_spindle, run_study
from .tensors import GradTensor3, IsotropicMaterial, SymTensor2, isotropic_stiffness, tensor_to_json


def _dims(values):
    if len(values) == 1:
        return (values[0],) * 3
    if len(values) != 3:
        raise ValueError("--dims takes one or three integers")
    return tuple(values)


def _floats(text, n):
    vals = [float(v) for v in text.split(",")] if text else [0.0] * n
    if len(vals) != n:
        raise ValueError(f"expected {n} comma-separated values, got {len(vals)}")
    return np.array(vals)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True))


def cmd_genmicro(a):
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dims = _dims(a.dims)
    for k in range(a.count):
        seed = derive_seed(a.seed, k)
        cfg = PointProcessConfig(a.vf, dims, rng_seed=seed, n_patterns=a.n_patterns, spacing=a.spacing)
        grid = generate_realization(cfg, PatternSpec(big_radius=a.radius))
        header, _ = save_voxel_image(grid, out / f"realization_{k:03d}.json")
        print(f"{header}  fraction={volume_fraction(grid):.6f}")
    return 0


def cmd_covario(a):
    grids = [load_voxel_image(p) for p in a.inputs]
    if a.periodic:
        grids = [g.__class__(g.dims, g.labels, g.spacing, True, g.seed_provenance) for g in grids]
    est = a.estimator
    cl = characteristic_lengths(grids, AXES, a.tol, a.hmax, est)
    if a.csv:
        with open(a.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["grid", "direction", "lag", "distance", "C"])
            for gi, g in enumerate(grids):
                for d in AXES:
                    c = covariance(g, d, a.hmax, est)
                    for lag, dist, val in zip(c.lags, c.distances, c.values):
                        w.writerow([gi, "".join(map(str, d)), int(lag), repr(float(dist)), repr(float(val))])
    summary = cl.to_dict()
    text = json.dumps(summary, indent=1, sort_keys=True)
    if a.json:
        Path(a.json).write_text(text)
    print(text)
    return 0


def _settings(a):
    return cs.SolverSettings(tolerance=a.tol, max_iterations=a.max_iter)


def cmd_correctors(a):
    grid = load_voxel_image(a.grid)
    nu_i = a.nu if a.nu_i is None else a.nu_i
    c_m = isotropic_stiffness(IsotropicMaterial(a.Em, a.nu))
    c_i = isotropic_stiffness(IsotropicMaterial(a.Ei, nu_i))
    mesh = cs.build_mesh(grid)
    s = _settings(a)
    chi0 = cs.solve_chi0(mesh, c_m, c_i, s)
    chi1 = None if a.no_chi1 else cs.solve_chi1(mesh, c_m, c_i, chi0, s)
    manifest = cs.save_correctors(
        a.out, mesh, chi0, chi1, grid=str(Path(a.grid).resolve()),
        materials={"matrix": [a.Em, a.nu], "inclusion": [a.Ei, nu_i]},
        solver={"tolerance": s.tolerance, "preconditioner": s.preconditioner},
        volume_fraction=volume_fraction(grid), seed_provenance=grid.seed_provenance)
    print(f"wrote {a.out} and {manifest}")
    return 0


def cmd_homog(a):
    chi0, chi1, man = cs.load_correctors(a.chi)
    grid = load_voxel_image(a.grid or man["grid"])
    mats = man["materials"]
    c_m = isotropic_stiffness(IsotropicMaterial(*mats["matrix"]))
    c_i = isotropic_stiffness(IsotropicMaterial(*mats["inclusion"]))
    mesh = cs.build_mesh(grid)
    if tuple(mesh.dims) != tuple(man["dims"]):
        raise AEHError(f"grid dims {mesh.dims} do not match corrector dims {man['dims']}")
    hset = homogenize_cell(mesh, c_m, c_i, chi0, chi1,
                           metadata={"seed_provenance": man.get("seed_provenance"), "grid": man["grid"]})
    if a.l0 is not None and a.l1 is not None:
        hset = dataclasses.replace(hset, lengths=(a.l0, a.l1), eta=a.l0 / a.l1)
    _write_json(a.out, hset.to_dict())
    print(json.dumps({"A": tensor_to_json(hset.A)["values"], "volume_fraction": hset.volume_fraction}))
    return 0


def cmd_energy(a):
    hset = HomogenizedSet.from_dict(json.loads(Path(a.homog).read_text()))
    e0 = SymTensor2(_floats(a.E0, 6))
    e1 = SymTensor2(_floats(a.E1, 6))
    g = GradTensor3(_floats(a.grad, 18).reshape(6, 3))
    rep = energy_total(hset, e0, e1, g, include_d=a.include_D, eta=a.eta)
    text = json.dumps(rep.to_dict() | {"within_bounds": rep.within_bounds()}, indent=1, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text)
    print(text)
    return 0 if rep.within_bounds() else 1


def cmd_pipeline(a):
    d = json.loads(Path(a.config).read_text())
    if a.out_dir:
        d["out_dir"] = a.out_dir
    if a.workers:
        d["workers"] = a.workers
    if a.force:
        d["force"] = True
    cfg = StudyConfig.from_dict(d)
    if not cfg.out_dir:
        raise AEHError("an output directory is required (config out_dir or --out-dir)")
    study = run_study(cfg)
    for r in study.fractions:
        status = "ok" if r.gate_ok else ("FAILED " + r.failure if r.failure else "BOUNDS VIOLATED")
        total = r.energy.total if r.energy else float("nan")
        print(f"f={r.fraction:.4f}  W_total={total:.6g}  {status}")
    print(f"results in {cfg.out_dir}")
    return 0 if study.passed else 1


class _Row:
    """Minimal record view for re-emitting a spindle from stored study JSON."""

    def __init__(self, d):
        self.fraction = d["fraction"]
        self.failure = d.get("failure")
        self.flags = d.get("flags", {})
        e = d.get("energy")
        self.energy = None
        if e is not None:
            self.energy = SimpleNamespace(total=e["total"], w_reuss=e["W_reuss"], w_voigt=e["W_voigt"])


def cmd_spindle(a):
    rows = []
    for p in a.inputs:
        rows.extend(_Row(d) for d in json.loads(Path(p).read_text())["fractions"])
    rows.sort(key=lambda r: r.fraction)
    emit_spindle(rows, a.out)
    print(f"wrote {a.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="stochaeh", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("genmicro", help="generate periodic pattern microstructures")
    g.add_argument("--vf", type=float, required=True, help="target inclusion volume fraction")
    g.add_argument("--dims", type=int, nargs="+", default=[48])
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--radius", type=float, default=2.0, help="big sphere radius of the base pattern (voxels)")
    g.add_argument("--n-patterns", type=int, default=None)
    g.add_argument("--spacing", type=float, default=1.0)
    g.set_defaults(func=cmd_genmicro)

    c = sub.add_parser("covario", help="covariograms and characteristic lengths")
    c.add_argument("--in", dest="inputs", nargs="+", required=True)
    c.add_argument("--hmax", type=int, default=None)
    c.add_argument("--tol", type=float, default=0.05)
    c.add_argument("--estimator", choices=["periodic", "truncated"], default=None)
    c.add_argument("--periodic", action="store_true", help="treat inputs as periodic")
    c.add_argument("--csv", default=None)
    c.add_argument("--json", default=None)
    c.set_defaults(func=cmd_covario)

    k = sub.add_parser("correctors", help="solve the cell problems on a voxel grid")
    k.add_argument("--grid", required=True)
    k.add_argument("--Em", type=float, default=1.0)
    k.add_argument("--Ei", type=float, default=100.0)
    k.add_argument("--nu", type=float, default=0.3)
    k.add_argument("--nu-i", type=float, default=None)
    k.add_argument("--tol", type=float, default=1e-8)
    k.add_argument("--max-iter", type=int, default=None)
    k.add_argument("--no-chi1", action="store_true")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_correctors)

    h = sub.add_parser("homog", help="assemble homogenized tensors from correctors")
    h.add_argument("--chi", required=True)
    h.add_argument("--grid", default=None, help="voxel header (default: the one recorded in the manifest)")
    h.add_argument("--l0", type=float, default=None)
    h.add_argument("--l1", type=float, default=None)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_homog)

    e = sub.add_parser("energy", help="two-term energy with bounds")
    e.add_argument("--homog", required=True)
    e.add_argument("--E0", default="1,0,0,0,0,0", help="six tensor components 11,22,33,23,13,12")
    e.add_argument("--E1", default="", help="six tensor components (default zero)")
    e.add_argument("--grad", default="", help="18 components d_m E_ij, row ij, column m (default zero)")
    e.add_argument("--eta", type=float, default=None)
    e.add_argument("--include-D", action="store_true")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_energy)

    q = sub.add_parser("pipeline", help="run a full study from a JSON config")
    q.add_argument("--config", required=True)
    q.add_argument("--out-dir", default=None)
    q.add_argument("--workers", type=int, default=None)
    q.add_argument("--force", action="store_true")
    q.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("spindle", help="Voigt-Reuss spindle CSV from study records")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spindle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AEHError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
