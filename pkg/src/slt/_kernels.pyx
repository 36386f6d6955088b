# cython: language_level=3
"""Compiled versions of the kernels in ``_kernels_py``.

Same signatures and semantics; see that module for the definitions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def cn_update(const double complex[:, :, ::1] zeta,
              const double complex[:, :, ::1] nl,
              xi,
              const double complex[:, ::1] a,
              const double complex[:, ::1] b):
    cdef Py_ssize_t nb = zeta.shape[0], ny = zeta.shape[1], nx = zeta.shape[2]
    cdef Py_ssize_t i, j, k
    out_arr = np.empty((nb, ny, nx), dtype=np.complex128)
    cdef double complex[:, :, ::1] out = out_arr
    cdef const double complex[:, :, ::1] f
    if xi is None:
        for i in range(nb):
            for j in range(ny):
                for k in range(nx):
                    out[i, j, k] = a[j, k] * zeta[i, j, k] + b[j, k] * nl[i, j, k]
    else:
        f = xi
        for i in range(nb):
            for j in range(ny):
                for k in range(nx):
                    out[i, j, k] = a[j, k] * zeta[i, j, k] + b[j, k] * (nl[i, j, k] + f[i, j, k])
    return out_arr


def advect(const double[:, :, ::1] u, const double[:, :, ::1] v,
           const double[:, :, ::1] zx, const double[:, :, ::1] zy):
    cdef Py_ssize_t nb = u.shape[0], ny = u.shape[1], nx = u.shape[2]
    cdef Py_ssize_t i, j, k
    out_arr = np.empty((nb, ny, nx), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(nb):
        for j in range(ny):
            for k in range(nx):
                out[i, j, k] = -(u[i, j, k] * zx[i, j, k] + v[i, j, k] * zy[i, j, k])
    return out_arr


def crps_terms(truth, ens):
    cdef const double[::1] t = np.ascontiguousarray(truth, dtype=np.float64)
    cdef const double[:, ::1] e = np.ascontiguousarray(ens, dtype=np.float64)
    cdef Py_ssize_t m = e.shape[0], n = e.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc, pair
    mae_arr = np.empty(n, dtype=np.float64)
    var_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mae = mae_arr
    cdef double[::1] var = var_arr
    for c in range(n):
        acc = 0.0
        pair = 0.0
        for i in range(m):
            acc += fabs(e[i, c] - t[c])
            for j in range(i + 1, m):
                pair += fabs(e[i, c] - e[j, c])
        mae[c] = acc / m
        var[c] = (2.0 * pair) / (2.0 * m * m)
    return mae_arr, var_arr


def jet_mask(U):
    arr = np.ascontiguousarray(U, dtype=np.float64)
    shape = arr.shape
    cdef const double[:, ::1] u = arr.reshape(-1, shape[len(shape) - 1])
    cdef Py_ssize_t nr = u.shape[0], n = u.shape[1]
    cdef Py_ssize_t r, j, jl, jr
    out_arr = np.zeros((nr, n), dtype=np.uint8)
    cdef unsigned char[:, ::1] out = out_arr
    cdef double x
    for r in range(nr):
        for j in range(n):
            x = u[r, j]
            jl = j - 1 if j > 0 else n - 1
            jr = j + 1 if j < n - 1 else 0
            # branchless: random-signed data defeats the predictor
            out[r, j] = (x > 0.0) & (x > u[r, jl]) & (x > u[r, jr])
    return out_arr.reshape(shape).astype(bool)


def first_change(counts, long direction, long persistence):
    arr = np.ascontiguousarray(counts, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None]
    cdef const cnp.int64_t[:, ::1] c = arr
    cdef Py_ssize_t nr = c.shape[0], nt = c.shape[1]
    cdef Py_ssize_t r, t, s
    cdef cnp.int64_t state, val
    cdef bint ok
    out_arr = np.full(nr, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    for r in range(nr):
        if nt == 0:
            continue
        state = c[r, 0]
        for t in range(1, nt - persistence + 1):
            val = c[r, t]
            if val == state:
                continue
            ok = True
            for s in range(t + 1, t + persistence):
                if c[r, s] != val:
                    ok = False
                    break
            if not ok:
                continue
            if (val - state) * direction > 0:
                out[r] = t
                break
            state = val
    return out_arr
