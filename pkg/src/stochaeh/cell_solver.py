"""Periodic voxel finite elements for the cell problems.

One trilinear hexahedron per voxel, 2 x 2 x 2 Gauss quadrature.  Nodes are
the ``nx * ny * nz`` independent periodic nodes: geometric node
``(i, j, k)`` on the far faces is identified with ``(i % nx, j % ny, k % nz)``.
Node ``(i, j, k)`` has index ``i + nx * (j + ny * k)`` and dofs ``3 * node + c``.

Corrector fields are indexed by unit engineering load modes: ``chi0[a]`` is
the fluctuation produced by the unit engineering strain ``e_a`` (so for
shear modes it equals the tensor corrector component ``chi0_{k,pq}``), and
``chi1[3 * b + m]`` answers the unit engineering gradient mode ``(b, m)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend
from .errors import ConvergenceError, DimsTooSmallError, DomainError, SolvabilityError
from .tensors import VOIGT_INDEX, VOIGT_PAIRS, SymTensor2

LOCAL_NODES = np.array([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
                        (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)], dtype=float)
_G = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))
GAUSS_POINTS = np.array([(_G[i], _G[j], _G[k]) for k in range(2) for j in range(2) for i in range(2)])


def shape_functions(xi):
    """Trilinear shape values ``(8,)`` and reference gradients ``(8, 3)`` on the unit cube."""
    xi = np.asarray(xi, dtype=float)
    f = np.where(LOCAL_NODES == 1, xi, 1.0 - xi)
    df = np.where(LOCAL_NODES == 1, 1.0, -1.0)
    n = f.prod(axis=1)
    dn = np.empty((8, 3))
    dn[:, 0] = df[:, 0] * f[:, 1] * f[:, 2]
    dn[:, 1] = f[:, 0] * df[:, 1] * f[:, 2]
    dn[:, 2] = f[:, 0] * f[:, 1] * df[:, 2]
    return n, dn


def strain_displacement(dn):
    """Engineering strain operator ``(6, 24)`` from physical gradients ``(8, 3)``."""
    b = np.zeros((6, 24))
    for a in range(8):
        dx, dy, dz = dn[a]
        c = 3 * a
        b[0, c] = dx
        b[1, c + 1] = dy
        b[2, c + 2] = dz
        b[3, c + 1], b[3, c + 2] = dz, dy
        b[4, c], b[4, c + 2] = dz, dx
        b[5, c], b[5, c + 1] = dy, dx
    return b


N_GAUSS = np.array([shape_functions(g)[0] for g in GAUSS_POINTS])
_DN_UNIT = np.array([shape_functions(g)[1] for g in GAUSS_POINTS])
B_UNIT = np.array([strain_displacement(dn) for dn in _DN_UNIT])


def _gradient_mode_operator():
    """``P[m] @ v`` is the engineering form of ``sym(v (x) e_m)``."""
    p = np.zeros((3, 6, 3))
    for m in range(3):
        for a, (r, s) in enumerate(VOIGT_PAIRS):
            if r == s:
                if r == m:
                    p[m, a, m] = 1.0
            else:
                if s == m:
                    p[m, a, r] += 1.0
                if r == m:
                    p[m, a, s] += 1.0
    return p


GRAD_MODE = _gradient_mode_operator()


@dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-8
    max_iterations: int | None = None
    preconditioner: str = "jacobi"
    quadrature_order: int = 2
    backend: str | None = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise DomainError("solver tolerance must be positive")
        if self.preconditioner not in ("jacobi", "none"):
            raise DomainError(f"unknown preconditioner {self.preconditioner!r}")
        if self.quadrature_order != 2:
            raise DomainError("only 2 x 2 x 2 Gauss quadrature is implemented")


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    dims: tuple
    spacing: float
    phase: np.ndarray
    periodic_source: bool = True

    @property
    def n_elements(self):
        return self.phase.size

    @property
    def n_nodes(self):
        return self.phase.size

    @property
    def n_dofs(self):
        return 3 * self.n_nodes

    @property
    def volume(self):
        return self.n_elements * self.spacing ** 3

    @property
    def gauss_weight(self):
        return self.spacing ** 3 / 8.0

    @property
    def B(self):
        return B_UNIT / self.spacing

    def node_coordinates(self):
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return self.spacing * np.column_stack([i.ravel(), j.ravel(), k.ravel()]).astype(float)

    def periodic_master(self):
        """Independent node for every geometric node of the ``(n+1)^3`` lattice (x-fastest)."""
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        return ((i % nx) + nx * ((j % ny) + ny * (k % nz))).ravel()

    def phase_grid(self):
        return self.phase.reshape(self.dims, order="F")


def build_mesh(grid):
    if min(grid.dims) < 2:
        raise DimsTooSmallError(f"periodic mesh needs at least 2 voxels per direction, got {grid.dims}")
    phase = np.ascontiguousarray(grid.flat_labels(), dtype=np.uint8)
    phase.setflags(write=False)
    return PeriodicMesh(tuple(grid.dims), grid.spacing, phase, grid.periodic)


def phase_stiffness(c_m, c_i):
    return np.stack([c_m.matrix, c_i.matrix])


def element_stiffness(c, spacing=1.0):
    """Element stiffness ``(24, 24)`` of one voxel with stiffness ``c`` (6 x 6)."""
    b = B_UNIT / spacing
    w = spacing ** 3 / 8.0
    return w * np.einsum("gia,ij,gjb->ab", b, c, b)


def element_strain_load(c, spacing=1.0):
    """``int B^T C dV`` over one voxel, ``(24, 6)``."""
    b = B_UNIT / spacing
    w = spacing ** 3 / 8.0
    return w * np.einsum("gia,ij->aj", b, c)


class VoxelOperator:
    """Matrix-free periodic stiffness operator."""

    def __init__(self, mesh, c_m, c_i, backend_name=None):
        self.mesh = mesh
        self.kernels = backend.get(backend_name)
        self.stiffness = phase_stiffness(c_m, c_i)
        self.ke = np.ascontiguousarray([element_stiffness(c, mesh.spacing) for c in self.stiffness])
        self.strain_load = np.array([element_strain_load(c, mesh.spacing) for c in self.stiffness])
        diag_e = np.ascontiguousarray(np.diagonal(self.ke, axis1=1, axis2=2)[mesh.phase])
        self.diagonal = self.kernels.scatter_add(diag_e, *mesh.dims)

    def apply(self, u):
        return self.kernels.voxel_matvec(u, self.mesh.phase, self.ke, *self.mesh.dims)

    def gather(self, u):
        return self.kernels.gather(np.ascontiguousarray(u, dtype=float).ravel(), *self.mesh.dims)

    def scatter(self, fe):
        return self.kernels.scatter_add(np.ascontiguousarray(fe, dtype=float), *self.mesh.dims)


def _dot(a, b):
    # numpy pairwise summation: reproducible regardless of BLAS threading
    return float(np.add.reduce(a * b))


def _project(u):
    """Remove the mean of each displacement component (rigid translations)."""
    v = u.reshape(-1, 3)
    return (v - np.add.reduce(v, axis=0) / v.shape[0]).ravel()


def conjugate_gradient(op, b, settings, load_scale=None, callback=None):
    """Projected preconditioned CG on the zero-mean subspace.

    Returns ``(x, iterations, relative_residual)``.  A right-hand side that is
    round-off relative to ``load_scale`` (norm of the unassembled element
    loads) is treated as exactly zero.
    """
    b = _project(b)
    bnorm = math.sqrt(_dot(b, b))
    x = np.zeros_like(b)
    if load_scale is not None and bnorm <= 1e-13 * load_scale or bnorm == 0.0:
        return x, 0, 0.0
    maxiter = settings.max_iterations or int(50 * op.mesh.n_dofs ** (1.0 / 3.0))
    dinv = 1.0 / op.diagonal if settings.preconditioner == "jacobi" else np.ones_like(b)
    r = b.copy()
    z = _project(dinv * r)
    p = z.copy()
    rz = _dot(r, z)
    res = 1.0
    for it in range(1, maxiter + 1):
        q = op.apply(p)
        alpha = rz / _dot(p, q)
        x += alpha * p
        r -= alpha * q
        res = math.sqrt(_dot(r, r)) / bnorm
        if callback is not None:
            callback(x)
        if res <= settings.tolerance:
            return _project(x), it, res
        z = _project(dinv * r)
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {maxiter} iterations (relative residual {res:.3e})",
        iterations=maxiter, residual=res)


@dataclass(frozen=True, eq=False)
class CorrectorChi0:
    fields: np.ndarray                 # (6, n_nodes, 3)
    iterations: tuple = ()
    residuals: tuple = ()


@dataclass(frozen=True, eq=False)
class CorrectorChi1:
    fields: np.ndarray                 # (18, n_nodes, 3), index 3 * b + m
    iterations: tuple = ()
    residuals: tuple = ()


def gauss_strains(mesh, u, op=None):
    """Engineering strain of nodal field ``u`` at every Gauss point, ``(ne, 8, 6)``."""
    op = op or _gather_only(mesh)
    ue = op.gather(u)
    return np.einsum("gij,ej->egi", mesh.B, ue)


def gauss_values(mesh, u, op=None):
    """Interpolated nodal vector field at every Gauss point, ``(ne, 8, 3)``."""
    op = op or _gather_only(mesh)
    ue = op.gather(u).reshape(-1, 8, 3)
    return np.einsum("ga,eac->egc", N_GAUSS, ue)


class _gather_only:
    def __init__(self, mesh):
        self.mesh = mesh
        self.kernels = backend.get()

    def gather(self, u):
        return self.kernels.gather(np.ascontiguousarray(u, dtype=float).ravel(), *self.mesh.dims)


def _solve_strain_modes(op, strains, settings):
    """Fluctuations for macroscopic engineering strains ``strains`` (k, 6)."""
    mesh = op.mesh
    loads = op.strain_load[mesh.phase]                       # (ne, 24, 6)
    out, its, res = [], [], []
    for e in strains:
        fe = loads @ e
        x, it, r = conjugate_gradient(op, -op.scatter(fe), settings,
                                      load_scale=float(np.linalg.norm(fe)))
        out.append(x.reshape(-1, 3))
        its.append(it)
        res.append(r)
    return np.array(out), tuple(its), tuple(res)


def solve_chi0(mesh, c_m, c_i, settings=None):
    """Order-1 correctors for the six unit engineering strains."""
    settings = settings or SolverSettings()
    op = VoxelOperator(mesh, c_m, c_i, settings.backend)
    fields, its, res = _solve_strain_modes(op, np.eye(6), settings)
    return CorrectorChi0(fields, its, res)


def mode_stresses(mesh, c_m, c_i, chi0, op=None):
    """Local strain and stress for each unit strain mode, both ``(6, ne, 8, 6)``."""
    c = phase_stiffness(c_m, c_i)[mesh.phase]
    strain = np.empty((6, mesh.n_elements, 8, 6))
    for a in range(6):
        strain[a] = gauss_strains(mesh, chi0.fields[a], op)
        strain[a, :, :, a] += 1.0
    stress = np.einsum("eij,kegj->kegi", c, strain)
    return strain, stress


def check_source_mean(g, weight, mode):
    """Raise when a body-force source ``g`` (ne, 8, 3) violates the periodic solvability condition."""
    total = np.abs(g).sum() * weight
    resultant = np.add.reduce(g.reshape(-1, 3), axis=0) * weight
    if np.abs(resultant).max() > 1e-10 * max(total, 1.0):
        raise SolvabilityError(f"gradient mode {mode}: source has non-zero mean {resultant.tolist()}")


def solve_chi1(mesh, c_m, c_i, chi0, settings=None):
    """Order-2 correctors for the 18 unit strain-gradient modes.

    Each solves, for periodic zero-mean ``phi``,
    ``int eps(v) : C : (eps(phi) + sym(chi0_b (x) e_m)) = int v . g``
    with ``g = (sigma_b - <sigma_b>) . e_m`` and ``sigma_b = C : L0 : e_b``.
    """
    settings = settings or SolverSettings()
    op = VoxelOperator(mesh, c_m, c_i, settings.backend)
    c = op.stiffness[mesh.phase]
    w = mesh.gauss_weight
    b_mat = mesh.B
    _, stress = mode_stresses(mesh, c_m, c_i, chi0, op)
    out, its, res = [], [], []
    for b in range(6):
        sig_full = stress[b][..., VOIGT_INDEX]                  # (ne, 8, 3, 3)
        chi_g = gauss_values(mesh, chi0.fields[b], op)          # (ne, 8, 3)
        for m in range(3):
            g = sig_full[..., :, m]
            g = g - np.add.reduce(g.reshape(-1, 3), axis=0) / (g.shape[0] * 8)
            check_source_mean(g, w, (b, m))
            h = np.einsum("ij,egj->egi", GRAD_MODE[m], chi_g)
            ch = np.einsum("eij,egj->egi", c, h)
            fe = w * (np.einsum("ga,egc->eac", N_GAUSS, g).reshape(-1, 24)
                      - np.einsum("gij,egi->ej", b_mat, ch))
            rhs = op.scatter(fe)
            x, it, r = conjugate_gradient(op, rhs, settings, load_scale=float(np.linalg.norm(fe)))
            out.append(x.reshape(-1, 3))
            its.append(it)
            res.append(r)
    return CorrectorChi1(np.array(out), tuple(its), tuple(res))


@dataclass(frozen=True, eq=False)
class LocalizationField:
    """Per-Gauss-point localization values ``(ne, 8, 6, k)`` (engineering strain rows)."""

    values: np.ndarray

    def mean(self):
        v = self.values
        return np.add.reduce(v.reshape(-1, *v.shape[2:]), axis=0) / (v.shape[0] * v.shape[1])


def localization_L0(mesh, chi0):
    vals = np.empty((mesh.n_elements, 8, 6, 6))
    for a in range(6):
        vals[..., a] = gauss_strains(mesh, chi0.fields[a])
        vals[:, :, a, a] += 1.0
    return LocalizationField(vals)


def localization_L1(mesh, chi0, chi1):
    vals = np.empty((mesh.n_elements, 8, 6, 18))
    for b in range(6):
        chi_g = gauss_values(mesh, chi0.fields[b])
        for m in range(3):
            k = 3 * b + m
            vals[..., k] = (np.einsum("ij,egj->egi", GRAD_MODE[m], chi_g)
                            + gauss_strains(mesh, chi1.fields[k]))
    return LocalizationField(vals)


@dataclass(frozen=True, eq=False)
class FullFieldResult:
    fluctuation: np.ndarray     # (n_nodes, 3)
    strain: np.ndarray          # (ne, 8, 6) engineering
    stress: np.ndarray          # (ne, 8, 6) tensor components
    mean_strain: SymTensor2
    mean_stress: SymTensor2
    iterations: int
    residual: float
    dims: tuple = field(default=())

    def element_strain(self):
        """Element-averaged strain tensor components on the voxel grid ``(nx, ny, nz, 6)``."""
        avg = self.strain.mean(axis=1) / np.array([1, 1, 1, 2, 2, 2.0])
        return avg.reshape(*self.dims[::-1], 6).transpose(2, 1, 0, 3)

    def work_mean(self):
        """``<sigma : eps>``."""
        return float(np.einsum("egi,egi->", self.stress, self.strain) / (self.strain.shape[0] * 8))

    def hill_mandel_gap(self):
        """Relative violation of ``<sigma : eps> = <sigma> : <eps>``."""
        w = self.work_mean()
        return abs(w - float(self.mean_stress.components @ self.mean_strain.engineering)) / abs(w)


def full_field(mesh, c_m, c_i, e_macro, settings=None):
    """Periodic response to the imposed macroscopic strain ``e_macro``."""
    settings = settings or SolverSettings()
    op = VoxelOperator(mesh, c_m, c_i, settings.backend)
    e = e_macro.engineering
    fields, its, res = _solve_strain_modes(op, e[None, :], settings)
    phi = fields[0]
    strain = gauss_strains(mesh, phi, op) + e
    stress = np.einsum("eij,egj->egi", op.stiffness[mesh.phase], strain)
    n = mesh.n_elements * 8
    mean_strain = SymTensor2.from_engineering(np.add.reduce(strain.reshape(-1, 6), axis=0) / n)
    mean_stress = SymTensor2(np.add.reduce(stress.reshape(-1, 6), axis=0) / n)
    return FullFieldResult(phi, strain, stress, mean_strain, mean_stress, its[0], res[0], mesh.dims)


def save_correctors(path, mesh, chi0, chi1=None, **extra):
    """Raw little-endian float64 fields plus ``<path>.json`` manifest."""
    path = Path(path)
    arrays = [chi0.fields] + ([chi1.fields] if chi1 is not None else [])
    data = np.concatenate(arrays, axis=0).astype("<f8")
    path.write_bytes(data.tobytes())
    manifest = {
        "format": "stochaeh-correctors", "version": 1, "dtype": "<f8",
        "dims": list(mesh.dims), "spacing": mesh.spacing, "n_nodes": mesh.n_nodes,
        "layout": "[mode, node, component], node x-fastest",
        "blocks": [{"name": "chi0", "modes": 6,
                    "iterations": list(chi0.iterations), "residuals": list(chi0.residuals)}],
    }
    if chi1 is not None:
        manifest["blocks"].append({"name": "chi1", "modes": 18,
                                   "iterations": list(chi1.iterations),
                                   "residuals": list(chi1.residuals)})
    manifest.update(extra)
    manifest_path = path.with_name(path.name + ".json")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path


def load_correctors(path):
    """Inverse of :func:`save_correctors`; returns ``(chi0, chi1 or None, manifest)``."""
    path = Path(path)
    manifest = json.loads(path.with_name(path.name + ".json").read_text())
    n = manifest["n_nodes"]
    data = np.frombuffer(path.read_bytes(), dtype="<f8").astype(float)
    modes = sum(b["modes"] for b in manifest["blocks"])
    if data.size != modes * n * 3:
        raise ValueError(f"{path}: {data.size} values, expected {modes * n * 3}")
    data = data.reshape(modes, n, 3)
    blocks = {b["name"]: b for b in manifest["blocks"]}
    chi0 = CorrectorChi0(data[:6], tuple(blocks["chi0"]["iterations"]),
                         tuple(blocks["chi0"]["residuals"]))
    chi1 = None
    if "chi1" in blocks:
        chi1 = CorrectorChi1(data[6:24], tuple(blocks["chi1"]["iterations"]),
                             tuple(blocks["chi1"]["residuals"]))
    return chi0, chi1, manifest
