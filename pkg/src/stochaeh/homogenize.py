"""Homogenized tensors from cell correctors, ensemble statistics and the two-term energy.

All cell integrals are volume averages (divided by ``|Y|``), so every tensor
reduces to the phase stiffness for a homogeneous cell.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cell_solver as cs
from .errors import DomainError, MixedMaterialError
from .tensors import (CouplingTensor5, ElasticTensor, GradTensor3, SymTensor2, coupling_form,
                      quadratic_form, reuss_bound, tensor_from_json, tensor_to_json, voigt_bound)


def _energy_tensor(mesh, chi0, c_m, c_i):
    """``< L0^T C L0 >`` assembled from the unit-mode local strains."""
    strain, stress = cs.mode_stresses(mesh, c_m, c_i, chi0)
    # strain[a] engineering, stress[b] tensor components: contraction is the energy
    m = np.einsum("aegi,begi->ab", strain, stress) / (mesh.n_elements * 8)
    return ElasticTensor(0.5 * (m + m.T))


def assemble_A00(mesh, chi0, c_m, c_i):
    """Effective stiffness ``<(1 + grad chi0) : C : (1 + grad chi0)>``."""
    return _energy_tensor(mesh, chi0, c_m, c_i)


def assemble_B01(mesh, chi0, c_m, c_i):
    """Order-one energy coupling tensor; same integrand as :func:`assemble_A00`."""
    return _energy_tensor(mesh, chi0, c_m, c_i)


def assemble_C00(mesh, chi0, c_m, c_i):
    """Coupling ``C5[a, 3b+m] = < sigma_a : sym(chi0_b (x) e_m) >``."""
    _, stress = cs.mode_stresses(mesh, c_m, c_i, chi0)
    out = np.empty((6, 18))
    for b in range(6):
        chi_g = cs.gauss_values(mesh, chi0.fields[b])
        for m in range(3):
            h = np.einsum("ij,egj->egi", cs.GRAD_MODE[m], chi_g)
            out[:, 3 * b + m] = np.einsum("aegi,egi->a", stress, h) / (mesh.n_elements * 8)
    return CouplingTensor5(out)


def assemble_D00(mesh, chi0, chi1, c_m, c_i):
    """Coupling ``D5[a, k] = < sigma_a : eps(chi1_k) >``."""
    _, stress = cs.mode_stresses(mesh, c_m, c_i, chi0)
    out = np.empty((6, 18))
    for k in range(18):
        eps = cs.gauss_strains(mesh, chi1.fields[k])
        out[:, k] = np.einsum("aegi,egi->a", stress, eps) / (mesh.n_elements * 8)
    return CouplingTensor5(out)


@dataclass(frozen=True, eq=False)
class HomogenizedSet:
    A: ElasticTensor
    B: ElasticTensor
    C5: CouplingTensor5
    D5: CouplingTensor5
    volume_fraction: float
    matrix: ElasticTensor
    inclusion: ElasticTensor
    nominal_fraction: float | None = None
    lengths: tuple | None = None
    eta: float | None = None
    n_realizations: int = 1
    metadata: dict = field(default_factory=dict)
    variance: dict | None = None

    def to_dict(self):
        out = {
            "A": tensor_to_json(self.A, "A00"), "B": tensor_to_json(self.B, "B01"),
            "C5": tensor_to_json(self.C5, "C00"), "D5": tensor_to_json(self.D5, "D00"),
            "volume_fraction": self.volume_fraction, "nominal_fraction": self.nominal_fraction,
            "matrix": tensor_to_json(self.matrix, "matrix"),
            "inclusion": tensor_to_json(self.inclusion, "inclusion"),
            "lengths": list(self.lengths) if self.lengths is not None else None,
            "eta": self.eta, "n_realizations": self.n_realizations, "metadata": self.metadata,
        }
        if self.variance is not None:
            out["variance"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                               for k, v in self.variance.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        var = d.get("variance")
        if var is not None:
            var = {k: (np.asarray(v) if isinstance(v, list) else v) for k, v in var.items()}
        return cls(tensor_from_json(d["A"]), tensor_from_json(d["B"]),
                   tensor_from_json(d["C5"]), tensor_from_json(d["D5"]),
                   d["volume_fraction"], tensor_from_json(d["matrix"]),
                   tensor_from_json(d["inclusion"]), d.get("nominal_fraction"),
                   tuple(d["lengths"]) if d.get("lengths") is not None else None,
                   d.get("eta"), d.get("n_realizations", 1), d.get("metadata", {}), var)


def homogenize_cell(mesh, c_m, c_i, chi0, chi1=None, nominal_fraction=None, metadata=None):
    """All four tensors of one cell; ``D5`` is zero when ``chi1`` is not given."""
    fraction = float(np.count_nonzero(mesh.phase)) / mesh.n_elements
    a = assemble_A00(mesh, chi0, c_m, c_i)
    b = assemble_B01(mesh, chi0, c_m, c_i)
    c5 = assemble_C00(mesh, chi0, c_m, c_i)
    d5 = assemble_D00(mesh, chi0, chi1, c_m, c_i) if chi1 is not None else CouplingTensor5.zero()
    meta = dict(metadata or {})
    meta.setdefault("chi1_solved", chi1 is not None)
    return HomogenizedSet(a, b, c5, d5, fraction, c_m, c_i, nominal_fraction, metadata=meta)


def _mean_std(arrays):
    # shifted data: identical inputs give the input back and exactly zero spread
    x = np.stack(arrays)
    d = x - x[0]
    mean = x[0] + d.mean(axis=0)
    std = d.std(axis=0, ddof=1) if len(arrays) > 1 else np.zeros_like(x[0])
    return mean, std


def ensemble_average(sets):
    """Componentwise mean of all tensors and lengths with a spread report."""
    sets = list(sets)
    if not sets:
        raise ValueError("cannot average an empty list of homogenized sets")
    ref = sets[0]
    for s in sets[1:]:
        if not (np.array_equal(s.matrix.matrix, ref.matrix.matrix)
                and np.array_equal(s.inclusion.matrix, ref.inclusion.matrix)
                and s.nominal_fraction == ref.nominal_fraction):
            raise MixedMaterialError("homogenized sets differ in phase materials or nominal fraction")
    n = len(sets)
    out, var = {}, {"n": n}
    for key in ("A", "B", "C5", "D5"):
        mean, std = _mean_std([getattr(s, key).matrix for s in sets])
        out[key] = mean
        var[f"{key}_std"] = std
        var[f"{key}_sem"] = std / np.sqrt(n)
    scale = np.abs(out["A"]).max()
    var["A_rel_std"] = np.where(np.abs(out["A"]) > 1e-8 * scale,
                                var["A_std"] / np.where(out["A"] == 0, 1, np.abs(out["A"])), 0.0)
    fracs = [s.volume_fraction for s in sets]
    fmean, fstd = _mean_std([np.array(fracs)[i:i + 1] for i in range(n)])
    var["fraction_std"] = float(fstd[0])
    lengths = None
    if all(s.lengths is not None for s in sets):
        lengths = tuple(float(v) for v in _mean_std([np.array(s.lengths, float) for s in sets])[0])
    etas = [s.eta for s in sets]
    eta = float(_mean_std([np.array([e]) for e in etas])[0][0]) if None not in etas else None
    return HomogenizedSet(
        ElasticTensor(out["A"]), ElasticTensor(out["B"]), CouplingTensor5(out["C5"]),
        CouplingTensor5(out["D5"]), float(fmean[0]), ref.matrix, ref.inclusion,
        ref.nominal_fraction, lengths, eta, n,
        {"members": [s.metadata for s in sets]}, var)


def energy_order0(a, e0):
    """``1/2 E0 : A : E0`` per unit volume."""
    return 0.5 * quadratic_form(a, e0)


@dataclass(frozen=True)
class EnergyReport:
    w0: float
    w1_b: float
    w1_c: float
    w1_d: float
    w1: float
    eta: float
    total: float
    w_reuss: float
    w_voigt: float
    bounds_fraction: float
    w_minus2: float = 0.0
    w_minus1: float = 0.0
    flags: dict = field(default_factory=dict)

    def within_bounds(self):
        return self.w_reuss <= self.total <= self.w_voigt

    def nearer_reuss(self):
        """Relative distance to the Reuss energy is smaller than to the Voigt energy."""
        if self.w_reuss == self.w_voigt:
            return False
        return (self.total - self.w_reuss) / self.w_reuss < (self.w_voigt - self.total) / self.w_voigt

    def to_dict(self):
        return {"W0": self.w0, "W1_B": self.w1_b, "W1_C": self.w1_c, "W1_D": self.w1_d,
                "W1": self.w1, "eta": self.eta, "total": self.total, "W_reuss": self.w_reuss,
                "W_voigt": self.w_voigt, "bounds_fraction": self.bounds_fraction,
                "W_minus2": self.w_minus2, "W_minus1": self.w_minus1, "flags": dict(self.flags)}


def energy_total(hset, e0, e1=None, grad_e0=None, include_d=False, eta=None, fraction=None):
    """Two-term energy ``W0 + eta W1`` with every ``W1`` contribution itemized.

    ``W1 = E0:B:E1 + E0:C5:grad E0 (+ E0:D5:grad E0 when include_d)``.
    Bounds use ``fraction`` (default: the set's measured fraction).
    """
    e1 = e1 if e1 is not None else SymTensor2.zero()
    grad_e0 = grad_e0 if grad_e0 is not None else GradTensor3.zero()
    eta = hset.eta if eta is None else eta
    if eta is None:
        raise DomainError("eta is required (set it on the homogenized set or pass it)")
    f = hset.volume_fraction if fraction is None else fraction
    w0 = float(energy_order0(hset.A, e0))
    w1_b = float(e0.engineering @ hset.B.matrix @ e1.engineering)
    w1_c = float(coupling_form(e0, hset.C5, grad_e0))
    w1_d = float(coupling_form(e0, hset.D5, grad_e0))
    w1 = w1_b + w1_c + (w1_d if include_d else 0.0)
    total = w0 + eta * w1
    w_r = float(energy_order0(reuss_bound(hset.matrix, hset.inclusion, f), e0))
    w_v = float(energy_order0(voigt_bound(hset.matrix, hset.inclusion, f), e0))
    flags = {"include_D": bool(include_d), "grad_E0_zero": not np.any(grad_e0.components),
             "chi1_solved": bool(hset.metadata.get("chi1_solved", True))}
    return EnergyReport(w0, w1_b, w1_c, w1_d, w1, float(eta), total, w_r, w_v, float(f), flags=flags)
