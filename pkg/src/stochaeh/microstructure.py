"""Realizations of the random two-phase medium.

Labels are stored as a ``uint8`` array of shape ``(nx, ny, nz)`` indexed
``[i, j, k]``; on disk they are written x-fastest (Fortran order).  Voxel
``(i, j, k)`` is the cube ``[i, i+1] x [j, j+1] x [k, k+1]`` in units of the
spacing, so its centre sits at ``(i + 0.5) * spacing``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DomainError, HeaderError, JammingError, OutOfBoundsError,
                     SizeMismatchError)

OCTAHEDRAL = ((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0),
              (0.0, -1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, -1.0))


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    dims: tuple
    labels: np.ndarray
    spacing: float = 1.0
    periodic: bool = False
    seed_provenance: dict | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise DomainError(f"dims must be three positive integers, got {self.dims}")
        labels = np.asarray(self.labels)
        if labels.size != math.prod(dims):
            raise SizeMismatchError(f"{labels.size} labels for dims {dims}")
        labels = labels.reshape(dims)
        if labels.dtype != np.uint8:
            if not np.isin(labels, (0, 1)).all():
                raise DomainError("labels must be 0 (matrix) or 1 (inclusion)")
            labels = labels.astype(np.uint8)
        elif labels.max(initial=0) > 1:
            raise DomainError("labels must be 0 (matrix) or 1 (inclusion)")
        labels = np.array(labels, copy=True)
        labels.setflags(write=False)
        if not self.spacing > 0:
            raise DomainError("spacing must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def empty(cls, dims, spacing=1.0, periodic=True):
        return cls(dims, np.zeros(dims, dtype=np.uint8), spacing, periodic)

    @property
    def n_voxels(self):
        return self.labels.size

    def flat_labels(self):
        """Labels in x-fastest order, matching mesh element numbering."""
        return self.labels.ravel(order="F")

    def same_as(self, other):
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.periodic == other.periodic
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True)
class PatternSpec:
    """One big sphere surrounded by six satellites.

    ``small_radius`` defaults to ``big_radius / 2`` and ``gap`` (surface to
    surface clearance between the big sphere and each satellite) to half the
    small radius.
    """

    big_radius: float = 1.0
    small_radius: float | None = None
    gap: float | None = None
    satellite_directions: tuple = OCTAHEDRAL

    def __post_init__(self):
        if self.small_radius is None:
            object.__setattr__(self, "small_radius", 0.5 * self.big_radius)
        if self.gap is None:
            object.__setattr__(self, "gap", 0.5 * self.small_radius)
        if not (self.big_radius > 0 and self.small_radius > 0):
            raise DomainError("pattern radii must be positive")
        if self.gap < 0:
            raise DomainError("gap must be non-negative")
        dirs = np.asarray(self.satellite_directions, dtype=float)
        if dirs.shape != (6, 3):
            raise DomainError("exactly six satellite directions are required")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise DomainError("satellite directions must be non-zero")
        dirs = dirs / norms[:, None]
        d = np.linalg.norm(dirs[:, None] - dirs[None], axis=-1)
        if np.any(d[np.triu_indices(6, 1)] < 1e-9):
            raise DomainError("satellite directions must be pairwise distinct")
        object.__setattr__(self, "satellite_directions", tuple(map(tuple, dirs)))

    def scaled(self, s):
        return PatternSpec(self.big_radius * s, self.small_radius * s, self.gap * s,
                           self.satellite_directions)

    @property
    def satellite_distance(self):
        return self.big_radius + self.small_radius + self.gap

    @property
    def extent(self):
        """Distance from the pattern centre to its outermost surface point."""
        return self.satellite_distance + self.small_radius

    @property
    def volume(self):
        return 4.0 / 3.0 * math.pi * (self.big_radius ** 3 + 6 * self.small_radius ** 3)

    def spheres(self, center=(0.0, 0.0, 0.0)):
        """Centres ``(7, 3)`` and radii ``(7,)`` of the pattern's spheres."""
        c = np.asarray(center, dtype=float)
        offsets = self.satellite_distance * np.asarray(self.satellite_directions)
        centers = np.vstack([c, c + offsets])
        radii = np.array([self.big_radius] + [self.small_radius] * 6)
        return centers, radii


@dataclass(frozen=True)
class PointProcessConfig:
    """Hard-core point process for pattern centres.

    ``n_patterns`` fixes the number of patterns; when omitted it is the
    number of unscaled patterns whose volume is closest to the target.  The
    pattern is then scaled homothetically so the fixed count hits the target
    fraction.  ``min_center_distance`` defaults to ``2 R + gap`` of the scaled
    pattern; independently of it, no sphere of a new pattern may come closer
    than ``gap`` to a sphere of an already placed pattern.
    """

    target_volume_fraction: float
    domain_dims: tuple
    rng_seed: int = 0
    min_center_distance: float | None = None
    max_placement_attempts: int = 100_000
    spacing: float = 1.0
    n_patterns: int | None = None
    tolerance: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.target_volume_fraction < 1.0:
            raise DomainError("target volume fraction must lie in [0, 1)")
        if len(self.domain_dims) != 3 or min(self.domain_dims) < 1:
            raise DomainError("domain_dims must be three positive integers")
        if self.n_patterns is not None and self.n_patterns < 1:
            raise DomainError("n_patterns must be at least 1")
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")


def _sphere_voxels(center, radius, dims, spacing):
    """Wrapped voxel indices whose centres lie inside the sphere."""
    idx = []
    for d in range(3):
        lo = math.floor((center[d] - radius) / spacing - 0.5)
        hi = math.ceil((center[d] + radius) / spacing - 0.5)
        idx.append(np.arange(lo, hi + 1))
    gx, gy, gz = np.meshgrid(*idx, indexing="ij")
    d2 = (((gx + 0.5) * spacing - center[0]) ** 2 + ((gy + 0.5) * spacing - center[1]) ** 2
          + ((gz + 0.5) * spacing - center[2]) ** 2)
    inside = d2 <= radius * radius
    return gx[inside] % dims[0], gy[inside] % dims[1], gz[inside] % dims[2]


def _paint(labels, centers, radii, spacing):
    for c, r in zip(centers, radii):
        labels[_sphere_voxels(c, r, labels.shape, spacing)] = 1


def rasterize_pattern(center, pat, grid):
    """Return a copy of ``grid`` with the pattern at ``center`` set to 1 (periodic wrap)."""
    labels = np.array(grid.labels, copy=True)
    centers, radii = pat.spheres(center)
    _paint(labels, centers, radii, grid.spacing)
    return VoxelGrid(grid.dims, labels, grid.spacing, grid.periodic, grid.seed_provenance)


def volume_fraction(grid):
    return float(np.count_nonzero(grid.labels)) / grid.n_voxels


def derive_seed(master, *keys):
    """Independent 64-bit seed for the stream identified by ``keys``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _min_image(delta, box):
    return delta - box * np.round(delta / box)


def _place(rng, n, pat, box, min_center, attempts_left):
    """Random sequential adsorption of ``n`` pattern centres."""
    unit_c, unit_r = pat.spheres()
    offsets = unit_c[1:]
    centers = np.empty((0, 3))
    sph_c = np.empty((0, 3))
    sph_r = np.empty(0)
    used = 0
    while len(centers) < n:
        if used >= attempts_left:
            return None, used
        used += 1
        c = rng.uniform(0.0, 1.0, 3) * box
        if len(centers):
            dc = _min_image(centers - c, box)
            if np.einsum("ij,ij->i", dc, dc).min() < min_center * min_center:
                continue
            cand = np.vstack([c, c + offsets])
            d = np.linalg.norm(_min_image(cand[:, None, :] - sph_c[None], box), axis=-1)
            if np.any(d < unit_r[:, None] + sph_r[None] + pat.gap):
                continue
        centers = np.vstack([centers, c])
        sph_c = np.vstack([sph_c, c, c + offsets])
        sph_r = np.concatenate([sph_r, unit_r])
    return centers, used


def _separation_ok(centers, pat, box, min_center):
    if len(centers) < 2:
        return True
    dc = np.linalg.norm(_min_image(centers[:, None] - centers[None], box), axis=-1)
    iu = np.triu_indices(len(centers), 1)
    if dc[iu].min() < min_center * (1 - 1e-12):
        return False
    unit_c, unit_r = pat.spheres()
    allc = (centers[:, None, :] + unit_c[None]).reshape(-1, 3)
    allr = np.tile(unit_r, len(centers))
    owner = np.repeat(np.arange(len(centers)), 7)
    d = np.linalg.norm(_min_image(allc[:, None] - allc[None], box), axis=-1)
    clash = (d < allr[:, None] + allr[None] + pat.gap * (1 - 1e-12)) & (owner[:, None] != owner[None])
    return not clash.any()


def _raster_fraction(centers, pat, dims, spacing):
    labels = np.zeros(dims, dtype=np.uint8)
    for c in centers:
        cs, rs = pat.spheres(c)
        _paint(labels, cs, rs, spacing)
    return labels, np.count_nonzero(labels) / labels.size


def generate_realization(cfg, pat=None):
    """Periodic realization of the pattern process at the target fraction.

    Deterministic for a fixed ``cfg.rng_seed``.  Raises :class:`JammingError`
    when placement attempts run out before the rasterized fraction lies
    within ``cfg.tolerance`` (relative) of the target.
    """
    pat = pat or PatternSpec()
    dims = tuple(int(d) for d in cfg.domain_dims)
    h = cfg.spacing
    box = np.array(dims, dtype=float) * h
    f = cfg.target_volume_fraction
    prov = {"rng_seed": int(cfg.rng_seed), "target_volume_fraction": f,
            "process": "rsa-pattern", "base_pattern": [pat.big_radius, pat.small_radius, pat.gap]}
    if f == 0.0:
        prov.update(n_patterns=0, scale=0.0, centers=[])
        return VoxelGrid(dims, np.zeros(dims, np.uint8), h, True, prov)

    target_volume = f * float(np.prod(box))
    n = cfg.n_patterns or max(1, round(target_volume / pat.volume))
    s0 = (target_volume / (n * pat.volume)) ** (1.0 / 3.0)
    lo, hi = f * (1 - cfg.tolerance), f * (1 + cfg.tolerance)
    rng = np.random.default_rng(cfg.rng_seed)
    budget = cfg.max_placement_attempts
    best = None
    while budget > 0:
        s_place = 1.05 * s0
        placed_pat = pat.scaled(s_place)
        dmin = cfg.min_center_distance
        if dmin is None:
            dmin = 2 * placed_pat.big_radius + placed_pat.gap
        centers, used = _place(rng, n, placed_pat, box, dmin, budget)
        budget -= used
        if centers is None:
            break
        s, labels, frac = _fit_scale(centers, pat, dims, h, s0, s_place, lo, hi)
        if best is None or abs(frac - f) < abs(best - f):
            best = frac
        final = pat.scaled(s)
        dmin_final = cfg.min_center_distance
        if dmin_final is None:
            dmin_final = 2 * final.big_radius + final.gap
        if lo <= frac <= hi and _separation_ok(centers, final, box, dmin_final):
            prov.update(n_patterns=int(n), scale=float(s), min_center_distance=float(dmin_final),
                        pattern=[final.big_radius, final.small_radius, final.gap],
                        centers=centers.tolist(), achieved_fraction=frac)
            return VoxelGrid(dims, labels, h, True, prov)
    raise JammingError(
        f"could not reach volume fraction {f} (+/-{cfg.tolerance:.0%}) with {n} patterns "
        f"within {cfg.max_placement_attempts} placement attempts; best achieved {best}",
        achieved_fraction=best)


def _fit_scale(centers, pat, dims, h, s0, s_max, lo, hi):
    """Homothetic scale in ``[0.6 s0, s_max]`` putting the rasterized fraction in ``[lo, hi]``."""
    labels, frac = _raster_fraction(centers, pat.scaled(s0), dims, h)
    if lo <= frac <= hi:
        return s0, labels, frac
    if frac < lo:
        a, b = s0, s_max
        lb, fb = _raster_fraction(centers, pat.scaled(b), dims, h)
        if fb < lo:
            return b, lb, fb
        # smallest scale reaching lo
        for _ in range(40):
            m = 0.5 * (a + b)
            lm, fm = _raster_fraction(centers, pat.scaled(m), dims, h)
            if fm >= lo:
                b, lb, fb = m, lm, fm
            else:
                a = m
        return b, lb, fb
    a, b = 0.6 * s0, s0
    la, fa = _raster_fraction(centers, pat.scaled(a), dims, h)
    if fa > hi:
        return a, la, fa
    # largest scale staying below hi
    for _ in range(40):
        m = 0.5 * (a + b)
        lm, fm = _raster_fraction(centers, pat.scaled(m), dims, h)
        if fm <= hi:
            a, la, fa = m, lm, fm
        else:
            b = m
    return a, la, fa


def grid_to_header(grid, data_file=None):
    header = {"dims": list(grid.dims), "spacing": grid.spacing, "byte_order": "le",
              "encoding": "u8", "periodic": grid.periodic}
    if data_file is not None:
        header["data_file"] = data_file
    if grid.seed_provenance is not None:
        header["seed_provenance"] = grid.seed_provenance
    return header


def save_voxel_image(grid, header_path, data_path=None):
    """Write the JSON header and raw ``u8`` labels (x-fastest)."""
    header_path = Path(header_path)
    data_path = Path(data_path) if data_path is not None else header_path.with_suffix(".raw")
    header = grid_to_header(grid, data_file=data_path.name)
    header_path.write_text(json.dumps(header, indent=1, sort_keys=True))
    data_path.write_bytes(grid.flat_labels().astype(np.uint8).tobytes())
    return header_path, data_path


def load_voxel_image(header_path, data_path=None):
    """Read a voxel image; any non-zero byte becomes label 1."""
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise HeaderError(f"{header_path}: not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise HeaderError(f"{header_path}: header must be a JSON object")
    dims = header.get("dims")
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims)):
        raise HeaderError(f"{header_path}: 'dims' must be three positive integers")
    spacing = header.get("spacing", 1.0)
    if not isinstance(spacing, (int, float)) or isinstance(spacing, bool) or spacing <= 0:
        raise HeaderError(f"{header_path}: 'spacing' must be a positive number")
    if header.get("byte_order", "le") not in ("le", "be"):
        raise HeaderError(f"{header_path}: unsupported byte_order {header.get('byte_order')!r}")
    if header.get("encoding", "u8") != "u8":
        raise HeaderError(f"{header_path}: unsupported encoding {header.get('encoding')!r}")
    if data_path is None:
        if "data_file" not in header:
            raise HeaderError(f"{header_path}: no data path given and no 'data_file' in header")
        data_path = header_path.parent / header["data_file"]
    raw = Path(data_path).read_bytes()
    n = dims[0] * dims[1] * dims[2]
    if len(raw) != n:
        raise SizeMismatchError(f"{data_path}: {len(raw)} bytes for dims {dims} ({n} expected)")
    flat = (np.frombuffer(raw, dtype=np.uint8) != 0).astype(np.uint8)
    labels = flat.reshape(dims, order="F")
    return VoxelGrid(tuple(dims), labels, float(spacing), bool(header.get("periodic", False)),
                     header.get("seed_provenance"))


def extract_subvolume(grid, size, origin=None, rng_seed=None):
    """Copy an axis-aligned block; with ``rng_seed`` the origin is drawn uniformly."""
    size = tuple(int(s) for s in size)
    if any(s < 1 or s > d for s, d in zip(size, grid.dims)):
        raise OutOfBoundsError(f"block {size} does not fit in grid {grid.dims}")
    if rng_seed is not None:
        rng = np.random.default_rng(rng_seed)
        origin = tuple(int(rng.integers(0, d - s + 1)) for s, d in zip(size, grid.dims))
    elif origin is None:
        origin = (0, 0, 0)
    origin = tuple(int(o) for o in origin)
    if any(o < 0 or o + s > d for o, s, d in zip(origin, size, grid.dims)):
        raise OutOfBoundsError(f"block {size} at {origin} exceeds grid {grid.dims}")
    sl = tuple(slice(o, o + s) for o, s in zip(origin, size))
    prov = {"extracted_from": grid.seed_provenance, "origin": list(origin), "rng_seed": rng_seed}
    return VoxelGrid(size, grid.labels[sl], grid.spacing, False, prov)


def random_origins(dims, size, count, seed):
    """``count`` distinct block origins, drawn without replacement when possible."""
    ranges = [d - s + 1 for d, s in zip(dims, size)]
    if min(ranges) < 1:
        raise OutOfBoundsError(f"block {size} does not fit in grid {dims}")
    total = math.prod(ranges)
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=count, replace=count > total)
    return [tuple(int(v) for v in np.unravel_index(p, ranges)) for p in picks]
