"""Gauss-Legendre rules on [0,1] and tensor rules on the unit square."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 2) on [0,1]^2
    weights: np.ndarray  # (nq,), sum to 1
    order: int

    @property
    def size(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def gauss_01(npoints: int) -> tuple[np.ndarray, np.ndarray]:
    """``npoints``-point Gauss-Legendre nodes and weights mapped to [0,1]."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def make_quadrature(order: int) -> QuadratureRule:
    """Tensor Gauss rule exact for bivariate polynomials of total degree ``order``.

    The rule is in fact exact for degree ``2n - 1`` in each variable
    separately, with ``n = ceil((order + 1) / 2)`` points per direction.
    """
    if order < 1:
        raise ValueError("quadrature order must be positive")
    n = (order + 2) // 2
    x, w = gauss_01(n)
    # x runs fastest
    X, Y = np.meshgrid(x, x, indexing="xy")
    WX, WY = np.meshgrid(w, w, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = (WX * WY).ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, order)
