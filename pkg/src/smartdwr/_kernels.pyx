# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cell loops for the flux residual and Jacobian of gradient-flux problems.

The flux is ``a(g) = (|g|^2 + eps^2)^m g`` with ``m = (p - 2) / 2``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()


def flux_residual(const double[:, ::1] U, const double[:, :, ::1] DN,
                  const double[::1] w, const double[::1] h, double p, double eps):
    cdef Py_ssize_t nc = U.shape[0], nloc = U.shape[1], nq = w.shape[0]
    cdef Py_ssize_t c, q, j
    cdef double m = 0.5 * (p - 2.0), gx, gy, s, phi, scale
    out_arr = np.zeros((nc, nloc), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for c in range(nc):
        for q in range(nq):
            gx = 0.0
            gy = 0.0
            for j in range(nloc):
                gx += U[c, j] * DN[q, j, 0]
                gy += U[c, j] * DN[q, j, 1]
            gx /= h[c]
            gy /= h[c]
            if m == 0.0:
                phi = 1.0
            else:
                s = gx * gx + gy * gy + eps * eps
                phi = pow(s, m)
            scale = w[q] * h[c] * phi
            for j in range(nloc):
                out[c, j] += scale * (gx * DN[q, j, 0] + gy * DN[q, j, 1])
    return out_arr


def flux_jacobian(const double[:, ::1] U, const double[:, :, ::1] DN,
                  const double[::1] w, const double[::1] h, double p, double eps):
    cdef Py_ssize_t nc = U.shape[0], nloc = U.shape[1], nq = w.shape[0]
    cdef Py_ssize_t c, q, i, j
    cdef double m = 0.5 * (p - 2.0), gx, gy, s, phi, dphi
    cdef double a00, a01, a11, bx, by
    out_arr = np.zeros((nc, nloc, nloc), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for c in range(nc):
        for q in range(nq):
            gx = 0.0
            gy = 0.0
            for j in range(nloc):
                gx += U[c, j] * DN[q, j, 0]
                gy += U[c, j] * DN[q, j, 1]
            gx /= h[c]
            gy /= h[c]
            if m == 0.0:
                phi = 1.0
                dphi = 0.0
            else:
                s = gx * gx + gy * gy + eps * eps
                phi = pow(s, m)
                dphi = 2.0 * m * pow(s, m - 1.0)
            a00 = w[q] * (phi + dphi * gx * gx)
            a01 = w[q] * dphi * gx * gy
            a11 = w[q] * (phi + dphi * gy * gy)
            for j in range(nloc):
                bx = a00 * DN[q, j, 0] + a01 * DN[q, j, 1]
                by = a01 * DN[q, j, 0] + a11 * DN[q, j, 1]
                for i in range(nloc):
                    out[c, i, j] += DN[q, i, 0] * bx + DN[q, i, 1] * by
    return out_arr
