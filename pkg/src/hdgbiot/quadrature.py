"""Gauss rules on the reference edge [0, 1] and triangle {(0,0), (1,0), (0,1)}."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 40


class UnsupportedDegreeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class QuadRule:
    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self):
        return len(self.weights)


def _check(degree):
    if degree < 0 or degree > MAX_DEGREE or int(degree) != degree:
        raise UnsupportedDegreeError(
            f"quadrature degree {degree} outside supported range 0..{MAX_DEGREE}")
    return int(degree)


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    degree = _check(degree)
    npts = degree // 2 + 1
    x, w = np.polynomial.legendre.leggauss(npts)
    return QuadRule(0.5 * (x + 1.0), 0.5 * w, degree)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> QuadRule:
    """Collapsed (Duffy) tensor rule; Gauss-Jacobi in the collapsed direction."""
    degree = _check(degree)
    npts = degree // 2 + 1
    xg, wg = np.polynomial.legendre.leggauss(npts)
    xj, wj = roots_jacobi(npts, 1.0, 0.0)
    s = 0.5 * (xg + 1.0)
    ws = 0.5 * wg
    r = 0.5 * (xj + 1.0)          # weight (1 - r) absorbed by Jacobi(1, 0)
    wr = 0.25 * wj
    R, S = np.meshgrid(r, s, indexing="ij")
    WR, WS = np.meshgrid(wr, ws, indexing="ij")
    x = R.ravel()
    y = ((1.0 - R) * S).ravel()
    pts = np.column_stack([x, y])
    return QuadRule(pts, (WR * WS).ravel(), degree)
