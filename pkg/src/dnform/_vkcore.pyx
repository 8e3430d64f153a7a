# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled von Kármán beam kernels.

Same contract as :mod:`dnform._kernel_py`; loops over states, elements and
Gauss points without temporaries.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef int[4] WPOS = [0, 2, 3, 5]


def vk_force_nl(double[:, ::1] q, cnp.int64_t[:, ::1] edofs, double[:, :, ::1] slopes,
                double[:, ::1] weights, double[::1] lengths, double ea):
    cdef Py_ssize_t ns = q.shape[0], nfull = q.shape[1]
    cdef Py_ssize_t ne = edofs.shape[0], ng = weights.shape[1]
    cdef Py_ssize_t s, e, g, a
    cdef double up, wp, wq, nu, tw
    cdef double fw[4]
    out = np.zeros((ns, nfull))
    cdef double[:, ::1] f = out
    for s in range(ns):
        for e in range(ne):
            up = (q[s, edofs[e, 4]] - q[s, edofs[e, 1]]) / lengths[e]
            nu = 0.0
            for a in range(4):
                fw[a] = 0.0
            for g in range(ng):
                wp = 0.0
                for a in range(4):
                    wp += slopes[e, g, a] * q[s, edofs[e, WPOS[a]]]
                wq = weights[e, g] * ea
                nu += 0.5 * wq * wp * wp
                tw = wq * (up * wp + 0.5 * wp * wp * wp)
                for a in range(4):
                    fw[a] += tw * slopes[e, g, a]
            nu /= lengths[e]
            f[s, edofs[e, 1]] -= nu
            f[s, edofs[e, 4]] += nu
            for a in range(4):
                f[s, edofs[e, WPOS[a]]] += fw[a]
    return out


def vk_tangent_nl(double[:, ::1] q, cnp.int64_t[:, ::1] edofs, double[:, :, ::1] slopes,
                  double[:, ::1] weights, double[::1] lengths, double ea):
    cdef Py_ssize_t ns = q.shape[0], nfull = q.shape[1]
    cdef Py_ssize_t ne = edofs.shape[0], ng = weights.shape[1]
    cdef Py_ssize_t s, e, g, a, b, ia, ib, iu0, iu1
    cdef double up, wp, wq, c, bu
    cdef double kuw[4]
    cdef double kww[4][4]
    out = np.zeros((ns, nfull, nfull))
    cdef double[:, :, ::1] kt = out
    for s in range(ns):
        for e in range(ne):
            up = (q[s, edofs[e, 4]] - q[s, edofs[e, 1]]) / lengths[e]
            bu = 1.0 / lengths[e]
            for a in range(4):
                kuw[a] = 0.0
                for b in range(4):
                    kww[a][b] = 0.0
            for g in range(ng):
                wp = 0.0
                for a in range(4):
                    wp += slopes[e, g, a] * q[s, edofs[e, WPOS[a]]]
                wq = weights[e, g] * ea
                c = wq * (up + 1.5 * wp * wp)
                for a in range(4):
                    kuw[a] += wq * wp * slopes[e, g, a]
                    for b in range(4):
                        kww[a][b] += c * slopes[e, g, a] * slopes[e, g, b]
            iu0 = edofs[e, 1]
            iu1 = edofs[e, 4]
            for a in range(4):
                ia = edofs[e, WPOS[a]]
                kt[s, iu0, ia] -= kuw[a] * bu
                kt[s, ia, iu0] -= kuw[a] * bu
                kt[s, iu1, ia] += kuw[a] * bu
                kt[s, ia, iu1] += kuw[a] * bu
                for b in range(4):
                    ib = edofs[e, WPOS[b]]
                    kt[s, ia, ib] += kww[a][b]
    return out
