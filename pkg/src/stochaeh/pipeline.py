"""End-to-end study: realizations, characteristic lengths, MREV ensembles, energy and bounds.

Every per-realization job is a pure function of a JSON-serializable job
description.  Results are cached under ``<out_dir>/cache/<sha256>.json`` and
always pass through JSON, so fresh, cached and parallel runs produce the same
bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, backend
from . import cell_solver as cs
from .covariogram import characteristic_lengths
from .errors import AEHError, BoundsGateError, DomainError, ImageTooSmallError
from .homogenize import HomogenizedSet, energy_total, ensemble_average, homogenize_cell
from .microstructure import (PatternSpec, PointProcessConfig, derive_seed, extract_subvolume,
                             generate_realization, load_voxel_image, volume_fraction)
from .tensors import (CouplingTensor5, GradTensor3, IsotropicMaterial, SymTensor2,
                      isotropic_stiffness)

SCHEMA_VERSION = 1

# seed stream tags
_COV, _MREV0, _MREV1 = 0, 1, 2


@dataclass(frozen=True)
class StudyConfig:
    matrix: IsotropicMaterial = IsotropicMaterial(1.0, 0.3)
    inclusion: IsotropicMaterial = IsotropicMaterial(100.0, 0.3)
    fractions: tuple = (0.01,)
    realizations: int | None = None
    master_seed: int = 0
    tol_factor: float = 0.05
    solver: cs.SolverSettings = cs.SolverSettings()
    mode: str = "virtual"
    image_paths: tuple = ()
    out_dir: str | None = None
    domain_dims: tuple = (48, 48, 48)
    pattern_radius: float = 2.0
    h_max: int | None = None
    min_side: int = 8
    max_side: int = 96
    force: bool = False
    workers: int = 1
    include_d: bool = False
    solve_chi1: bool = True
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for key in ("matrix", "inclusion"):
            v = getattr(self, key)
            if not isinstance(v, IsotropicMaterial):
                v = IsotropicMaterial(**v) if isinstance(v, dict) else IsotropicMaterial(*v)
                object.__setattr__(self, key, v)
        if isinstance(self.solver, dict):
            object.__setattr__(self, "solver", cs.SolverSettings(**self.solver))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))
        object.__setattr__(self, "image_paths", tuple(str(p) for p in self.image_paths))
        object.__setattr__(self, "domain_dims", tuple(int(d) for d in self.domain_dims))
        if self.schema_version != SCHEMA_VERSION:
            raise DomainError(f"unsupported config schema_version {self.schema_version}")
        if self.mode not in ("virtual", "image"):
            raise DomainError(f"mode must be 'virtual' or 'image', got {self.mode!r}")
        if self.mode == "virtual" and not self.fractions:
            raise DomainError("at least one volume fraction is required")
        if any(not 0.0 <= f < 1.0 for f in self.fractions):
            raise DomainError("volume fractions must lie in [0, 1)")
        if self.mode == "image" and not self.image_paths:
            raise DomainError("image mode needs at least one image path")
        if self.realizations is not None and self.realizations < 1:
            raise DomainError("realizations must be at least 1")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")
        if self.min_side < 2:
            raise DomainError("min_side must be at least 2")

    @property
    def n_realizations(self):
        if self.realizations is not None:
            return self.realizations
        return 10 if self.mode == "virtual" else 15

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["fractions"] = list(self.fractions)
        d["image_paths"] = list(self.image_paths)
        d["domain_dims"] = list(self.domain_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        if "schema_version" not in d:
            raise DomainError("config is missing 'schema_version'")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FractionRecord:
    fraction: float
    mode: str
    lengths: dict | None = None
    mrev_sides: tuple | None = None
    homogenized: HomogenizedSet | None = None
    realizations: list = field(default_factory=list)
    e0: SymTensor2 | None = None
    e1: SymTensor2 | None = None
    e1_spread: dict | None = None
    energy: object = None
    seeds: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    failure: str | None = None

    @property
    def gate_ok(self):
        return self.failure is None and self.energy is not None and self.energy.within_bounds()

    def to_dict(self):
        return {
            "fraction": self.fraction, "mode": self.mode, "lengths": self.lengths,
            "mrev_sides": list(self.mrev_sides) if self.mrev_sides else None,
            "homogenized": self.homogenized.to_dict() if self.homogenized else None,
            "realizations": self.realizations,
            "E0": self.e0.components.tolist() if self.e0 is not None else None,
            "E1": self.e1.components.tolist() if self.e1 is not None else None,
            "E1_spread": self.e1_spread,
            "energy": self.energy.to_dict() if self.energy is not None else None,
            "gate_ok": self.gate_ok,
            "nearer_reuss": self.energy.nearer_reuss() if self.energy is not None else None,
            "seeds": self.seeds, "flags": self.flags, "failure": self.failure,
        }


@dataclass
class StudyRecord:
    config: dict
    fractions: list

    @property
    def passed(self):
        return all(r.gate_ok for r in self.fractions)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "version": __version__, "config": self.config,
                "passed": self.passed, "fractions": [r.to_dict() for r in self.fractions]}


def _materials(cfg):
    return isotropic_stiffness(cfg.matrix), isotropic_stiffness(cfg.inclusion)


def _job_key(job):
    blob = json.dumps(job, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _run_jobs(func, jobs, cfg):
    """Run jobs (optionally in worker processes), cached by content hash, in index order."""
    cache = Path(cfg.out_dir) / "cache" if cfg.out_dir else None
    results = [None] * len(jobs)
    todo = []
    for i, job in enumerate(jobs):
        job = dict(job, stage=func.__name__, version=__version__, backend=backend.NAME)
        jobs[i] = job
        if cache is not None:
            path = cache / f"{_job_key(job)}.json"
            if path.exists():
                results[i] = json.loads(path.read_text())
                continue
        todo.append(i)
    if cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            fresh = list(pool.map(func, [jobs[i] for i in todo]))
    else:
        fresh = [func(jobs[i]) for i in todo]
    for i, res in zip(todo, fresh):
        text = json.dumps(res, sort_keys=True)
        if cache is not None:
            cache.mkdir(parents=True, exist_ok=True)
            (cache / f"{_job_key(jobs[i])}.json").write_text(text)
        results[i] = json.loads(text)
    return results


def _job_grid(job):
    if job["source"] == "generate":
        pcfg = PointProcessConfig(job["fraction"], tuple(job["dims"]), rng_seed=job["seed"])
        return generate_realization(pcfg, PatternSpec(big_radius=job["pattern_radius"]))
    image = load_voxel_image(job["image"])
    return extract_subvolume(image, tuple(job["dims"]), rng_seed=job["seed"])


def lengths_job(job):
    grid = _job_grid(job)
    cl = characteristic_lengths([grid], tol_factor=job["tol_factor"], h_max=job["h_max"])
    return {"l0": cl.l0, "l1": cl.l1, "fallback": cl.fallback,
            "per_direction": list(cl.per_direction_values), "fraction": volume_fraction(grid)}


def _job_solver(job):
    mats = [isotropic_stiffness(IsotropicMaterial(*job[k])) for k in ("matrix", "inclusion")]
    return mats, cs.SolverSettings(**job["solver"])


def mrev0_job(job):
    """Correctors, tensors and the E0 verification run on one MREV0 realization."""
    grid = _job_grid(job)
    (c_m, c_i), settings = _job_solver(job)
    mesh = cs.build_mesh(grid)
    chi0 = cs.solve_chi0(mesh, c_m, c_i, settings)
    chi1 = cs.solve_chi1(mesh, c_m, c_i, chi0, settings) if job["solve_chi1"] else None
    hset = homogenize_cell(mesh, c_m, c_i, chi0, chi1, job["nominal_fraction"],
                           {"seed": job["seed"], "dims": list(grid.dims)})
    e0 = SymTensor2(job["E0"])
    ff = cs.full_field(mesh, c_m, c_i, e0, settings)
    return {"homogenized": hset.to_dict(), "fraction": hset.volume_fraction,
            "E0_check": float(np.abs(ff.mean_strain.components - e0.components).max()),
            "hill_mandel": ff.hill_mandel_gap(), "work": ff.work_mean(),
            "iterations": list(chi0.iterations) + list(chi1.iterations if chi1 else ())}


def windowed_mean(field_grid, side, periodic):
    """Mean over all cubic windows of side ``side`` of the window-averaged field.

    Periodic fields wrap around; otherwise only windows fully inside count.
    """
    v = np.asarray(field_grid, dtype=float)
    for ax in range(3):
        n = v.shape[ax]
        w = min(side, n)
        if periodic:
            v = np.concatenate([v, np.take(v, np.arange(w - 1), axis=ax)], axis=ax)
        c = np.cumsum(v, axis=ax)
        zero = np.zeros_like(np.take(c, [0], axis=ax))
        c = np.concatenate([zero, c], axis=ax)
        v = (np.take(c, np.arange(w, c.shape[ax]), axis=ax)
             - np.take(c, np.arange(0, c.shape[ax] - w), axis=ax)) / w
    return v.reshape(-1, *v.shape[3:]).mean(axis=0)


def mrev1_job(job):
    """Windowed strain deviation from E0 on one MREV1 realization."""
    grid = _job_grid(job)
    (c_m, c_i), settings = _job_solver(job)
    mesh = cs.build_mesh(grid)
    e0 = SymTensor2(job["E0"])
    ff = cs.full_field(mesh, c_m, c_i, e0, settings)
    dev = windowed_mean(ff.element_strain(), job["window"], grid.periodic) - e0.components
    return {"deviation": dev.tolist(), "fraction": volume_fraction(grid),
            "hill_mandel": ff.hill_mandel_gap()}


def _side(length, spacing, cfg, what):
    n = max(cfg.min_side, math.ceil(length / spacing - 1e-9))
    if n > cfg.max_side and not cfg.force:
        raise DomainError(f"{what} side {n} voxels exceeds the {cfg.max_side} cap (use force)")
    return n


def _material_pairs(cfg):
    return {"matrix": [cfg.matrix.young_modulus, cfg.matrix.poisson_ratio],
            "inclusion": [cfg.inclusion.young_modulus, cfg.inclusion.poisson_ratio],
            "solver": dataclasses.asdict(cfg.solver)}


def _finish(rec, cfg, sets_json, mrev1_json, lengths):
    """Ensemble tensors, E1 and the energy report for one fraction."""
    members = [HomogenizedSet.from_dict(r["homogenized"]) for r in sets_json]
    eta = lengths["l0"] / lengths["l1"]
    members = [dataclasses.replace(m, lengths=(lengths["l0"], lengths["l1"]), eta=eta) for m in members]
    hset = ensemble_average(members)
    devs = np.array([r["deviation"] for r in mrev1_json])
    e1_mean = devs.mean(axis=0) / eta
    e1_std = devs.std(axis=0, ddof=1) / eta if len(devs) > 1 else np.zeros(6)
    rec.homogenized = hset
    rec.e1 = SymTensor2(e1_mean)
    rec.e1_spread = {"std": e1_std.tolist(), "sem": (e1_std / math.sqrt(len(devs))).tolist()}
    rec.realizations = [{"fraction": r["fraction"], "A": r["homogenized"]["A"]["values"],
                         "E0_check": r["E0_check"], "hill_mandel": r["hill_mandel"]}
                        for r in sets_json]
    rec.energy = energy_total(hset, rec.e0, rec.e1, GradTensor3.zero(), include_d=cfg.include_d, eta=eta)
    rec.flags.update(rec.energy.flags)
    rec.flags.update(l1_fallback=bool(lengths["fallback"]), E1_windowed=True,
                     grad_E0_zero=True)


def _homogeneous_record(cfg, f):
    c_m, c_i = _materials(cfg)
    hset = HomogenizedSet(c_m, c_m, CouplingTensor5.zero(), CouplingTensor5.zero(), 0.0,
                          c_m, c_i, f, None, 0.0, 1, {"homogeneous": True})
    rec = FractionRecord(f, cfg.mode, e0=SymTensor2.uniaxial(1.0), e1=SymTensor2.zero())
    rec.homogenized = hset
    rec.energy = energy_total(hset, rec.e0, rec.e1, include_d=cfg.include_d, eta=0.0, fraction=0.0)
    rec.flags.update(rec.energy.flags)
    rec.flags["homogeneous"] = True
    return rec


def _virtual_fraction(cfg, fi, f):
    if f == 0.0:
        return _homogeneous_record(cfg, f)
    n = cfg.n_realizations
    h = 1.0
    rec = FractionRecord(f, "virtual", e0=SymTensor2.uniaxial(1.0))
    base = {"source": "generate", "fraction": f, "pattern_radius": cfg.pattern_radius}
    if max(cfg.domain_dims) > cfg.max_side and not cfg.force:
        raise DomainError(f"domain {cfg.domain_dims} exceeds the {cfg.max_side} cap (use force)")
    cov_jobs = [dict(base, dims=list(cfg.domain_dims), seed=derive_seed(cfg.master_seed, _COV, fi, r),
                     tol_factor=cfg.tol_factor, h_max=cfg.h_max) for r in range(n)]
    rec.seeds = {"master": cfg.master_seed, "covariance": [j["seed"] for j in cov_jobs]}
    lengths = _combine_lengths(_run_jobs(lengths_job, cov_jobs, cfg), cfg)
    rec.lengths = lengths
    n0 = _side(lengths["l0"], h, cfg, "MREV0")
    n1 = _side(lengths["l1"], h, cfg, "MREV1")
    rec.mrev_sides = (n0, n1)
    common = dict(base, nominal_fraction=f, E0=rec.e0.components.tolist(), **_material_pairs(cfg))
    jobs0 = [dict(common, dims=[n0] * 3, seed=derive_seed(cfg.master_seed, _MREV0, fi, r),
                  solve_chi1=cfg.solve_chi1) for r in range(n)]
    jobs1 = [dict(common, dims=[n1] * 3, seed=derive_seed(cfg.master_seed, _MREV1, fi, r),
                  window=max(1, round(lengths["l0"] / h))) for r in range(n)]
    rec.seeds.update(mrev0=[j["seed"] for j in jobs0], mrev1=[j["seed"] for j in jobs1])
    _finish(rec, cfg, _run_jobs(mrev0_job, jobs0, cfg), _run_jobs(mrev1_job, jobs1, cfg), lengths)
    return rec


def _combine_lengths(per_grid, cfg):
    l0 = sum(r["l0"] for r in per_grid) / len(per_grid)
    l1 = sum(r["l1"] for r in per_grid) / len(per_grid)
    return {"l0": l0, "l1": l1, "fallback": any(r["fallback"] for r in per_grid),
            "tolerance_used": cfg.tol_factor, "per_grid": [[r["l0"], r["l1"]] for r in per_grid]}


def _image_record(cfg):
    images = [load_voxel_image(p) for p in cfg.image_paths]
    fractions = [volume_fraction(g) for g in images]
    f = sum(fractions) / len(fractions)
    rec = FractionRecord(f, "image", e0=SymTensor2.uniaxial(1.0))
    if f == 0.0:
        rec = _homogeneous_record(cfg, 0.0)
        rec.mode = "image"
        return rec
    cl = characteristic_lengths(images, tol_factor=cfg.tol_factor, h_max=cfg.h_max, estimator="truncated")
    lengths = {"l0": cl.l0, "l1": cl.l1, "fallback": cl.fallback, "tolerance_used": cfg.tol_factor,
               "per_direction": list(cl.per_direction_values)}
    rec.lengths = lengths
    h = images[0].spacing
    n0 = _side(cl.l0, h, cfg, "MREV0")
    n1 = _side(cl.l1, h, cfg, "MREV1")
    smallest = min(min(g.dims) for g in images)
    if n1 > smallest:
        raise ImageTooSmallError(f"MREV1 side {n1} voxels (l1={cl.l1:.3g}) exceeds the image extent {smallest}")
    rec.mrev_sides = (n0, n1)
    n = cfg.n_realizations
    common = dict(source="extract", nominal_fraction=f, E0=rec.e0.components.tolist(), **_material_pairs(cfg))
    # image content enters the cache key so edited files are not mistaken for old ones
    digests = [hashlib.sha256(g.labels.tobytes()).hexdigest() for g in images]
    jobs0, jobs1 = [], []
    for r in range(n):
        k = r % len(images)
        img = dict(image=str(Path(cfg.image_paths[k]).resolve()), image_sha256=digests[k])
        jobs0.append(dict(common, **img, dims=[n0] * 3, seed=derive_seed(cfg.master_seed, _MREV0, 0, r),
                          solve_chi1=cfg.solve_chi1))
        jobs1.append(dict(common, **img, dims=[n1] * 3, seed=derive_seed(cfg.master_seed, _MREV1, 0, r),
                          window=max(1, round(cl.l0 / h))))
    rec.seeds = {"master": cfg.master_seed, "mrev0": [j["seed"] for j in jobs0],
                 "mrev1": [j["seed"] for j in jobs1]}
    _finish(rec, cfg, _run_jobs(mrev0_job, jobs0, cfg), _run_jobs(mrev1_job, jobs1, cfg), lengths)
    return rec


def _failed(f, mode, exc):
    return FractionRecord(f, mode, failure=f"{type(exc).__name__}: {exc}")


def run_virtual_study(cfg):
    if cfg.mode != "virtual":
        raise DomainError("run_virtual_study needs mode 'virtual'")
    records = []
    for fi, f in enumerate(cfg.fractions):
        try:
            records.append(_virtual_fraction(cfg, fi, f))
        except AEHError as exc:
            records.append(_failed(f, "virtual", exc))
    study = StudyRecord(_record_config(cfg), records)
    _persist(study, cfg)
    return study


def run_image_study(cfg):
    if cfg.mode != "image":
        raise DomainError("run_image_study needs mode 'image'")
    rec = _image_record(cfg)
    study = StudyRecord(_record_config(cfg), [rec])
    _persist(study, cfg)
    return study


def _record_config(cfg):
    # execution-only settings do not belong in the result
    d = cfg.to_dict()
    for key in ("workers", "out_dir"):
        d.pop(key)
    return d


def run_study(cfg):
    return run_virtual_study(cfg) if cfg.mode == "virtual" else run_image_study(cfg)


def _persist(study, cfg):
    if not cfg.out_dir:
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "study.json").write_text(json.dumps(study.to_dict(), indent=1, sort_keys=True))
    emit_spindle([study], out / "spindle.csv")
    emit_realizations([study], out / "realizations.csv")


def _flatten(records):
    rows = []
    for r in records:
        rows.extend(r.fractions if isinstance(r, StudyRecord) else [r])
    if not rows:
        raise ValueError("no records to write")
    return rows


def _flag_text(rec):
    if rec.failure:
        return "failed"
    return ";".join(sorted(k for k, v in rec.flags.items() if v is True))


def emit_spindle(records, path):
    """CSV ``fraction, W_total, W_Reuss, W_Voigt, flags``; one row per fraction."""
    rows = _flatten(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "W_total", "W_Reuss", "W_Voigt", "flags"])
        for r in rows:
            if r.energy is None:
                w.writerow([repr(r.fraction), "", "", "", _flag_text(r)])
            else:
                e = r.energy
                w.writerow([repr(r.fraction), repr(e.total), repr(e.w_reuss), repr(e.w_voigt), _flag_text(r)])
    return Path(path)


def emit_realizations(records, path):
    """Per-realization fraction and A components."""
    rows = _flatten(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fraction", "realization", "measured_fraction", "A11", "A22", "A33", "A12", "A44"])
        for r in rows:
            for i, m in enumerate(r.realizations):
                a = m["A"]
                w.writerow([repr(r.fraction), i, repr(m["fraction"]), repr(a[0][0]), repr(a[1][1]),
                            repr(a[2][2]), repr(a[0][1]), repr(a[3][3])])
    return Path(path)


def require_bounds(study):
    """Raise :class:`BoundsGateError` naming every fraction that violates the bounds."""
    bad = [r.fraction for r in study.fractions if not r.gate_ok]
    if bad:
        raise BoundsGateError(f"bounds gate failed for fractions {bad}")
