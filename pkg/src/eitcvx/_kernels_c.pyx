# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled float64 kernels; same contract as :mod:`eitcvx._kernels_py`.

Inputs of any other dtype are forwarded to the numpy implementation.
"""
import numpy as np
cimport numpy as cnp

from . import _kernels_py

cnp.import_array()


cdef void _residuals(const double[:, ::1] r, const double[:, ::1] s, double h, double eps,
                     double[:, ::1] L1, double[:, ::1] L2) noexcept nogil:
    cdef Py_ssize_t nx = r.shape[0], ny = r.shape[1], i, j
    cdef double inv_h2 = 1.0 / (h * h), inv_2h = 0.5 / h, k = 2.0 / eps
    cdef double rx, ry, sx, sy, adv
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            rx = (r[i + 1, j] - r[i - 1, j]) * inv_2h
            ry = (r[i, j + 1] - r[i, j - 1]) * inv_2h
            sx = (s[i + 1, j] - s[i - 1, j]) * inv_2h
            sy = (s[i, j + 1] - s[i, j - 1]) * inv_2h
            adv = k * (rx * (rx - sx) + ry * (ry - sy))
            L1[i, j] = (r[i + 1, j] + r[i - 1, j] + r[i, j + 1] + r[i, j - 1] - 4.0 * r[i, j]) * inv_h2 + adv
            L2[i, j] = (s[i + 1, j] + s[i - 1, j] + s[i, j + 1] + s[i, j - 1] - 4.0 * s[i, j]) * inv_h2 + adv


def _is_f64(*arrays):
    return all(isinstance(a, np.ndarray) and a.dtype == np.float64 for a in arrays)


def residuals(r, s, h, eps):
    if not _is_f64(r, s):
        return _kernels_py.residuals(r, s, h, eps)
    r = np.ascontiguousarray(r)
    s = np.ascontiguousarray(s)
    L1 = np.zeros_like(r)
    L2 = np.zeros_like(r)
    cdef double[:, ::1] rv = r, sv = s, l1 = L1, l2 = L2
    cdef double hh = h, ee = eps
    with nogil:
        _residuals(rv, sv, hh, ee, l1, l2)
    return L1, L2


def fit_gradient(r, s, psiw, h, eps):
    if not _is_f64(r, s, psiw):
        return _kernels_py.fit_gradient(r, s, psiw, h, eps)
    r = np.ascontiguousarray(r)
    s = np.ascontiguousarray(s)
    psiw = np.ascontiguousarray(psiw)
    L1 = np.zeros_like(r)
    L2 = np.zeros_like(r)
    gr = np.zeros_like(r)
    gs = np.zeros_like(r)
    cdef double[:, ::1] rv = r, sv = s, wv = psiw, l1 = L1, l2 = L2, gdr = gr, gds = gs
    cdef Py_ssize_t nx = r.shape[0], ny = r.shape[1], i, j
    cdef double inv_h2 = 1.0 / (<double>h * <double>h), inv_2h = 0.5 / <double>h
    cdef double a1, a2, T, rx, ry, sx, sy, cx, cy
    cdef double hh = h, ee = eps
    with nogil:
        _residuals(rv, sv, hh, ee, l1, l2)
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                a1 = 2.0 * wv[i, j] * l1[i, j]
                a2 = 2.0 * wv[i, j] * l2[i, j]
                if a1 == 0.0 and a2 == 0.0:
                    continue
                rx = (rv[i + 1, j] - rv[i - 1, j]) * inv_2h
                ry = (rv[i, j + 1] - rv[i, j - 1]) * inv_2h
                sx = (sv[i + 1, j] - sv[i - 1, j]) * inv_2h
                sy = (sv[i, j + 1] - sv[i, j - 1]) * inv_2h
                T = 2.0 * (a1 + a2) / ee
                # Laplacian part
                a1 = a1 * inv_h2
                a2 = a2 * inv_h2
                gdr[i, j] -= 4.0 * a1
                gdr[i + 1, j] += a1
                gdr[i - 1, j] += a1
                gdr[i, j + 1] += a1
                gdr[i, j - 1] += a1
                gds[i, j] -= 4.0 * a2
                gds[i + 1, j] += a2
                gds[i - 1, j] += a2
                gds[i, j + 1] += a2
                gds[i, j - 1] += a2
                # advection part
                cx = T * (2.0 * rx - sx) * inv_2h
                cy = T * (2.0 * ry - sy) * inv_2h
                gdr[i + 1, j] += cx
                gdr[i - 1, j] -= cx
                gdr[i, j + 1] += cy
                gdr[i, j - 1] -= cy
                cx = -T * rx * inv_2h
                cy = -T * ry * inv_2h
                gds[i + 1, j] += cx
                gds[i - 1, j] -= cx
                gds[i, j + 1] += cy
                gds[i, j - 1] -= cy
    return L1, L2, gr, gs
