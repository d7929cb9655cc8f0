"""Symmetric elasticity tensors in reduced (engineering Voigt) storage.

Index order for symmetric pairs is 11, 22, 33, 23, 13, 12.

Convention
----------
Stiffness-like matrices hold tensor components, e.g. ``C[0, 3] = C_1123``.
Strain-like vectors are contracted in engineering form, with shear entries
doubled (``gamma_23 = 2 * eps_23``).  With that rule every reduced
contraction equals the corresponding full-index contraction:

    e : C : e           == eng(e) @ C @ eng(e)
    e : C5 : g          == eng(e) @ C5 @ eng(g)

where ``C5`` is a 6 x 18 coupling matrix whose column ``3 * b + m`` is the
pair ``(kl, m)`` with ``kl`` the Voigt index ``b``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularTensorError

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
SHEAR_FACTOR = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
CONVENTION = "engineering-voigt"

# VOIGT_INDEX[i, j] -> reduced index of the symmetric pair (i, j)
VOIGT_INDEX = np.empty((3, 3), dtype=int)
for _a, (_i, _j) in enumerate(VOIGT_PAIRS):
    VOIGT_INDEX[_i, _j] = VOIGT_INDEX[_j, _i] = _a


def _frozen(array, shape):
    out = np.array(array, dtype=float)
    if out.shape != shape:
        out = out.reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SymTensor2:
    """Symmetric second-order tensor stored as its six tensor components."""

    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(self.components, (6,)))

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(np.array([0.5 * (m[i, j] + m[j, i]) for i, j in VOIGT_PAIRS]))

    @classmethod
    def from_engineering(cls, v):
        return cls(np.asarray(v, dtype=float) / SHEAR_FACTOR)

    @classmethod
    def zero(cls):
        return cls(np.zeros(6))

    @classmethod
    def uniaxial(cls, value=1.0, axis=0):
        c = np.zeros(6)
        c[axis] = value
        return cls(c)

    @property
    def engineering(self):
        return self.components * SHEAR_FACTOR

    def to_matrix(self):
        m = np.empty((3, 3))
        for a, (i, j) in enumerate(VOIGT_PAIRS):
            m[i, j] = m[j, i] = self.components[a]
        return m

    def __repr__(self):
        return f"SymTensor2({self.components.tolist()})"


@dataclass(frozen=True, eq=False)
class GradTensor3:
    """Gradient of a symmetric strain field, components ``G[ij, m] = d_m E_ij``."""

    components: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "components", _frozen(self.components, (6, 3)))

    @classmethod
    def zero(cls):
        return cls(np.zeros((6, 3)))

    @classmethod
    def from_full(cls, g):
        g = np.asarray(g, dtype=float)
        return cls(np.array([[0.5 * (g[i, j, m] + g[j, i, m]) for m in range(3)]
                             for i, j in VOIGT_PAIRS]))

    @property
    def engineering(self):
        return (self.components * SHEAR_FACTOR[:, None]).ravel()

    def to_full(self):
        g = np.empty((3, 3, 3))
        for a, (i, j) in enumerate(VOIGT_PAIRS):
            g[i, j, :] = g[j, i, :] = self.components[a]
        return g


@dataclass(frozen=True, eq=False)
class ElasticTensor:
    """Rank-4 stiffness with minor and major symmetries as a 6 x 6 matrix (GPa)."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (6, 6)))

    @classmethod
    def from_full(cls, c):
        c = np.asarray(c, dtype=float)
        m = np.empty((6, 6))
        for a, (i, j) in enumerate(VOIGT_PAIRS):
            for b, (k, l) in enumerate(VOIGT_PAIRS):
                m[a, b] = c[i, j, k, l]
        return cls(m)

    def to_full(self):
        return self.matrix[np.ix_(VOIGT_INDEX.ravel(), VOIGT_INDEX.ravel())].reshape(3, 3, 3, 3)

    def mandel(self):
        """Orthonormal-basis form; its eigenvalues are those of the rank-4 map."""
        w = np.sqrt(SHEAR_FACTOR)
        return self.matrix * np.outer(w, w)

    def compliance(self):
        try:
            s = np.linalg.inv(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise SingularTensorError("stiffness matrix is singular") from exc
        if not np.all(np.isfinite(s)) or np.linalg.cond(self.matrix) > 1e14:
            raise SingularTensorError("stiffness matrix is numerically singular")
        return s

    def is_positive_definite(self, rtol=0.0):
        ev = np.linalg.eigvalsh(0.5 * (self.mandel() + self.mandel().T))
        return bool(ev.min() > rtol * abs(ev).max())

    def __add__(self, other):
        return ElasticTensor(self.matrix + other.matrix)

    def __mul__(self, scalar):
        return ElasticTensor(self.matrix * float(scalar))

    __rmul__ = __mul__

    def __repr__(self):
        return f"ElasticTensor({np.array2string(self.matrix, precision=5)})"


@dataclass(frozen=True, eq=False)
class CouplingTensor5:
    """Rank-5 coupling between a strain slot and a strain-gradient slot (6 x 18)."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (6, 18)))

    @classmethod
    def zero(cls):
        return cls(np.zeros((6, 18)))

    @classmethod
    def from_full(cls, c):
        c = np.asarray(c, dtype=float)
        m = np.empty((6, 18))
        for a, (i, j) in enumerate(VOIGT_PAIRS):
            for b, (k, l) in enumerate(VOIGT_PAIRS):
                m[a, 3 * b:3 * b + 3] = c[i, j, k, l, :]
        return cls(m)

    def to_full(self):
        idx = VOIGT_INDEX.ravel()
        m = self.matrix.reshape(6, 6, 3)
        return m[np.ix_(idx, idx)].reshape(3, 3, 3, 3, 3)


@dataclass(frozen=True)
class IsotropicMaterial:
    young_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise DomainError(f"Young's modulus must be positive, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise DomainError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}")

    @property
    def lame(self):
        e, nu = self.young_modulus, self.poisson_ratio
        return e * nu / ((1 + nu) * (1 - 2 * nu)), e / (2 * (1 + nu))


def isotropic_stiffness(mat):
    """Isotropic stiffness from Lame constants of ``mat``."""
    if not isinstance(mat, IsotropicMaterial):
        mat = IsotropicMaterial(*mat)
    lam, mu = mat.lame
    m = np.zeros((6, 6))
    m[:3, :3] = lam
    m[np.arange(3), np.arange(3)] = lam + 2 * mu
    m[np.arange(3, 6), np.arange(3, 6)] = mu
    return ElasticTensor(m)


def _check_fraction(f):
    if not 0.0 <= f <= 1.0:
        raise DomainError(f"volume fraction must lie in [0, 1], got {f}")


def voigt_bound(c_m, c_i, f):
    _check_fraction(f)
    if f == 0.0:
        return c_m
    if f == 1.0:
        return c_i
    return ElasticTensor((1 - f) * c_m.matrix + f * c_i.matrix)


def reuss_bound(c_m, c_i, f):
    _check_fraction(f)
    if f == 0.0:
        return c_m
    if f == 1.0:
        return c_i
    s = (1 - f) * c_m.compliance() + f * c_i.compliance()
    try:
        c = np.linalg.inv(s)
    except np.linalg.LinAlgError as exc:
        raise SingularTensorError("averaged compliance is singular") from exc
    return ElasticTensor(0.5 * (c + c.T))


def quadratic_form(c, e):
    """``e : c : e`` in GPa."""
    v = e.engineering
    return float(v @ c.matrix @ v)


def coupling_form(e, c5, g):
    """Full contraction ``E_ij C_ijklm G_klm``."""
    return float(e.engineering @ c5.matrix @ g.engineering)


def tensor_to_json(t, name=None):
    out = {"type": type(t).__name__, "convention": CONVENTION}
    if name is not None:
        out["name"] = name
    arr = t.matrix if hasattr(t, "matrix") else t.components
    out["shape"] = list(arr.shape)
    out["values"] = arr.tolist()
    return out


def tensor_from_json(d):
    if d.get("convention") != CONVENTION:
        raise ValueError(f"unsupported tensor convention {d.get('convention')!r}")
    kinds = {cls.__name__: cls for cls in (SymTensor2, GradTensor3, ElasticTensor, CouplingTensor5)}
    return kinds[d["type"]](np.asarray(d["values"], dtype=float))
