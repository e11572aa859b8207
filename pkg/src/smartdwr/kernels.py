"""Hot assembly kernels with a compiled core and a numpy fallback.

The compiled module is used when it imports; setting ``SMARTDWR_PURE=1``
forces the fallback. ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os

import numpy as np


def _flux_factors(G: np.ndarray, p: float, eps: float):
    m = 0.5 * (p - 2.0)
    if m == 0.0:
        phi = np.ones(G.shape[:-1])
        return phi, np.zeros_like(phi)
    s = np.einsum("...d,...d->...", G, G) + eps * eps
    return s ** m, 2.0 * m * s ** (m - 1.0)


def flux_residual_py(U, DN, w, h, p, eps):
    """``R[c, j] = sum_q w_q h_c a(grad u) . DN[q, j]``."""
    G = np.einsum("cj,qjd->cqd", U, DN) / h[:, None, None]
    phi, _ = _flux_factors(G, p, eps)
    F = G * (phi * w)[..., None]
    return np.einsum("cqd,qjd->cj", F, DN) * h[:, None]


def flux_jacobian_py(U, DN, w, h, p, eps):
    """``K[c, i, j] = sum_q w_q DN[q, i] . a'(grad u) DN[q, j]``."""
    G = np.einsum("cj,qjd->cqd", U, DN) / h[:, None, None]
    phi, dphi = _flux_factors(G, p, eps)
    A = (dphi * w)[..., None, None] * G[..., :, None] * G[..., None, :]
    A[..., 0, 0] += phi * w
    A[..., 1, 1] += phi * w
    T = np.einsum("cqde,qje->cqdj", A, DN)
    return np.einsum("qid,cqdj->cij", DN, T)


_force_pure = os.environ.get("SMARTDWR_PURE", "") not in ("", "0")
try:
    if _force_pure:
        raise ImportError
    from ._kernels import flux_jacobian as _fj, flux_residual as _fr
    BACKEND = "compiled"
except ImportError:
    _fr, _fj = flux_residual_py, flux_jacobian_py
    BACKEND = "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def flux_residual(U, DN, w, h, p: float, eps: float) -> np.ndarray:
    return np.asarray(_fr(_c(U), _c(DN), _c(w), _c(h), float(p), float(eps)))


def flux_jacobian(U, DN, w, h, p: float, eps: float) -> np.ndarray:
    return np.asarray(_fj(_c(U), _c(DN), _c(w), _c(h), float(p), float(eps)))
