"""Two-point probability of the inclusion phase and the lengths read off it.

``C(h) = P{x in B, x + h d in B}`` along an integer lattice direction ``d``.
The correlation length ``l0`` is where ``C`` first settles into a band around
its asymptote ``p^2``; the repulsion length ``l1`` comes from the next
excursion out of that band (see :func:`repulsion_distance`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPairError, LengthOrderError, NoCrossingError

AXES = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


@dataclass(frozen=True, eq=False)
class Covariogram:
    direction: tuple
    lags: np.ndarray
    values: np.ndarray
    p: float
    estimator: str
    step: float = 1.0          # physical length of one lag

    def __post_init__(self):
        if len(self.lags) != len(self.values):
            raise ValueError("lags and values differ in length")

    @property
    def distances(self):
        return self.lags * self.step


@dataclass(frozen=True)
class CharacteristicLengths:
    l0: float
    l1: float
    per_direction_values: tuple = field(default=())
    tolerance_used: float = 0.05
    fallback: bool = False

    def to_dict(self):
        return {"l0": self.l0, "l1": self.l1, "tolerance_used": self.tolerance_used,
                "fallback": self.fallback, "per_direction_values": [dict(d) for d in self.per_direction_values]}


def _direction(d):
    d = tuple(int(v) for v in d)
    if len(d) != 3 or d == (0, 0, 0):
        raise ValueError(f"direction must be a non-zero integer 3-vector, got {d}")
    return d


def _autocorrelation(labels, estimator):
    """Pair counts ``sum_x I(x) I(x+s)`` for every shift ``s``, and the pair totals."""
    a = labels.astype(float)
    if estimator == "periodic":
        f = np.fft.rfftn(a)
        counts = np.fft.irfftn(f * np.conj(f), s=a.shape, axes=(0, 1, 2))
        return np.rint(counts), None
    if estimator == "truncated":
        shape = tuple(2 * n for n in a.shape)
        f = np.fft.rfftn(a, s=shape, axes=(0, 1, 2))
        counts = np.fft.irfftn(f * np.conj(f), s=shape, axes=(0, 1, 2))
        return np.rint(counts), shape
    raise ValueError(f"unknown estimator {estimator!r}")


def _max_lag(dims, d):
    return min((n - 1) // abs(c) for n, c in zip(dims, d) if c)


def _sample(grid, acf, d, h_max, estimator):
    dims = grid.dims
    lags = np.arange(h_max + 1)
    shifts = np.outer(lags, d)
    if estimator == "periodic":
        idx = tuple((shifts[:, i] % dims[i]) for i in range(3))
        values = acf[idx] / grid.n_voxels
    else:
        pairs = np.prod([dims[i] - np.abs(shifts[:, i]) for i in range(3)], axis=0)
        if np.any(pairs <= 0):
            bad = int(lags[np.argmax(pairs <= 0)])
            raise EmptyPairError(f"no valid voxel pairs at lag {bad} along {d} in grid {dims}")
        idx = tuple((shifts[:, i] % (2 * dims[i])) for i in range(3))
        values = acf[idx] / pairs
    return lags, values


def covariance(grid, direction=(1, 0, 0), h_max=None, estimator=None, _acf=None):
    """Covariogram of ``grid`` along ``direction`` for lags ``0..h_max``.

    ``estimator`` defaults to ``"periodic"`` for periodic grids and
    ``"truncated"`` (pairs inside the grid only) otherwise.
    """
    d = _direction(direction)
    estimator = estimator or ("periodic" if grid.periodic else "truncated")
    if h_max is None:
        h_max = max(1, min(n // abs(c) for n, c in zip(grid.dims, d) if c) // 2)
    h_max = int(h_max)
    if h_max < 0:
        raise ValueError("h_max must be non-negative")
    if estimator == "truncated" and h_max > _max_lag(grid.dims, d):
        raise EmptyPairError(f"h_max={h_max} along {d} leaves no valid pairs in grid {grid.dims}")
    acf = _acf if _acf is not None else _autocorrelation(grid.labels, estimator)[0]
    lags, values = _sample(grid, acf, d, h_max, estimator)
    p = float(np.count_nonzero(grid.labels)) / grid.n_voxels
    values[0] = p
    step = float(np.linalg.norm(d)) * grid.spacing
    return Covariogram(d, lags, values, p, estimator, step)


def _band(cov, tol_factor):
    p = cov.p
    drop = cov.values[0] - p * p
    if not 0.0 < p < 1.0 or drop <= 0.0:
        raise NoCrossingError(f"degenerate covariogram (p={p}): no asymptote crossing exists")
    return cov.values - p * p, tol_factor * drop


def _entry(dev, band, start):
    """First lag ``h >= start`` inside the band, interpolated from ``h - 1``; None if never."""
    inside = np.abs(dev) <= band
    hits = np.nonzero(inside[start:])[0]
    if hits.size == 0:
        return None, None
    h = int(start + hits[0])
    prev = dev[h - 1]
    if abs(prev) <= band:
        return float(h), h
    edge = band if prev > 0 else -band
    t = (prev - edge) / (prev - dev[h])
    return float(h - 1 + t), h


def correlation_length(cov, tol_factor=0.05):
    """``l0``: first entry of ``C`` into ``|C - p^2| <= tol_factor (C(0) - p^2)``."""
    dev, band = _band(cov, tol_factor)
    x, _ = _entry(dev, band, 1)
    if x is None:
        raise NoCrossingError(f"covariogram along {cov.direction} never reaches the asymptote band "
                              f"within h_max={int(cov.lags[-1])}; increase h_max")
    return x * cov.step


def _peak(dev, lo, hi):
    """Sub-lag position of the maximum of ``dev`` on ``[lo, hi)`` by a parabola through its neighbours."""
    k = lo + int(np.argmax(dev[lo:hi]))
    if 0 < k < len(dev) - 1:
        a, b, c = dev[k - 1], dev[k], dev[k + 1]
        curv = a - 2 * b + c
        if curv < 0:
            return float(k + 0.5 * (a - c) / curv)
    return float(k)


def repulsion_distance(cov, tol_factor=0.05):
    """``(l1, fallback)`` from the first excursion of ``C`` out of the band after ``l0``.

    A dip below the asymptote (repulsion hole) gives ``l1`` at the re-entry
    into the band.  A rise above it is a correlation peak between
    neighbouring inclusions; ``l1`` is then the position of that peak.  When
    ``C`` never leaves the band again, ``l1 = 2 l0`` and ``fallback`` is True.
    """
    dev, band = _band(cov, tol_factor)
    x0, h0 = _entry(dev, band, 1)
    if x0 is None:
        raise NoCrossingError(f"covariogram along {cov.direction} never reaches the asymptote band")
    outside = np.nonzero(np.abs(dev[h0:]) > band)[0]
    if outside.size == 0:
        return 2.0 * x0 * cov.step, True
    exit_h = h0 + int(outside[0])
    x1, back = _entry(dev, band, exit_h)
    if x1 is None:
        raise NoCrossingError(f"covariogram along {cov.direction} leaves the band after l0 and does not "
                              f"return within h_max={int(cov.lags[-1])}; increase h_max")
    if dev[exit_h] > 0:
        x1 = _peak(dev, exit_h, back)
    return x1 * cov.step, False


def characteristic_lengths(grids, directions=AXES, tol_factor=0.05, h_max=None, estimator=None):
    """Average ``l0``, ``l1`` over directions, then over grids."""
    grids = list(grids)
    if not grids:
        raise ValueError("need at least one grid")
    rows, l0_grid, l1_grid = [], [], []
    for gi, grid in enumerate(grids):
        est = estimator or ("periodic" if grid.periodic else "truncated")
        acf = _autocorrelation(grid.labels, est)[0]
        l0s, l1s = [], []
        for d in directions:
            try:
                cov = covariance(grid, d, h_max, est, _acf=acf)
                l0 = correlation_length(cov, tol_factor)
                l1, fb = repulsion_distance(cov, tol_factor)
            except (NoCrossingError, EmptyPairError) as exc:
                raise type(exc)(f"grid {gi}, direction {tuple(d)}: {exc}") from exc
            rows.append({"grid": gi, "direction": list(cov.direction), "l0": l0, "l1": l1, "fallback": fb})
            l0s.append(l0)
            l1s.append(l1)
        l0_grid.append(sum(l0s) / len(l0s))
        l1_grid.append(sum(l1s) / len(l1s))
        if not 0.0 < l0_grid[-1] < l1_grid[-1]:
            raise LengthOrderError(f"grid {gi}: expected 0 < l0 < l1, got l0={l0_grid[-1]}, l1={l1_grid[-1]}")
    l0 = sum(l0_grid) / len(l0_grid)
    l1 = sum(l1_grid) / len(l1_grid)
    return CharacteristicLengths(l0, l1, tuple(rows), tol_factor, any(r["fallback"] for r in rows))
