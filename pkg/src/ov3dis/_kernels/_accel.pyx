# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot loops: projection + depth test, bitset
popcount batches, and pairwise mask intersections.

Must stay bit-identical to numpy_backend.py: same floating-point expression
order, integer counting until the final division. The extension is built
with -ffp-contract=off so no FMA contraction can change results.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()

cdef extern from *:
    """
    static inline unsigned long long ov3dis_popcnt64(unsigned long long x) {
    #if defined(__GNUC__) || defined(__clang__)
        return __builtin_popcountll(x);
    #else
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0f0f0f0f0f0f0f0fULL;
        return (x * 0x0101010101010101ULL) >> 56;
    #endif
    }
    """
    unsigned long long ov3dis_popcnt64(unsigned long long x) nogil

DEF COORD_LIMIT = 2147483648.0


def project_points(const double[:, ::1] positions, const double[:, ::1] rot, const double[::1] trans,
                   double fx, double fy, double cx, double cy,
                   const float[:, ::1] depth, int width, int height, double delta):
    cdef Py_ssize_t n = positions.shape[0]
    u_arr = np.full(n, -1, dtype=np.int64)
    v_arr = np.full(n, -1, dtype=np.int64)
    z_arr = np.empty(n, dtype=np.float64)
    vis_arr = np.zeros(n, dtype=np.uint8)
    cdef long long[::1] u = u_arr
    cdef long long[::1] v = v_arr
    cdef double[::1] z = z_arr
    cdef unsigned char[::1] vis = vis_arr

    cdef double r00 = rot[0, 0], r01 = rot[0, 1], r02 = rot[0, 2]
    cdef double r10 = rot[1, 0], r11 = rot[1, 1], r12 = rot[1, 2]
    cdef double r20 = rot[2, 0], r21 = rot[2, 1], r22 = rot[2, 2]
    cdef double t0 = trans[0], t1 = trans[1], t2 = trans[2]

    cdef Py_ssize_t i
    cdef double x, y, zz, xc, yc, zc, uf, vf, d
    cdef long long ui, vi
    with nogil:
        for i in range(n):
            x = positions[i, 0]
            y = positions[i, 1]
            zz = positions[i, 2]
            xc = r00 * x + r01 * y + r02 * zz + t0
            yc = r10 * x + r11 * y + r12 * zz + t1
            zc = r20 * x + r21 * y + r22 * zz + t2
            z[i] = zc
            if zc > 0.0:
                uf = fx * (xc / zc) + cx
                vf = fy * (yc / zc) + cy
                if fabs(uf) < COORD_LIMIT and fabs(vf) < COORD_LIMIT:
                    ui = <long long>floor(uf)
                    vi = <long long>floor(vf)
                    u[i] = ui
                    v[i] = vi
                    if 0 <= ui < width and 0 <= vi < height:
                        d = <double>depth[vi, ui]
                        if d > 0.0 and fabs(zc - d) <= delta:
                            vis[i] = 1
    return u_arr, v_arr, z_arr, vis_arr.astype(bool)


def popcount_rows(const cnp.uint64_t[:, ::1] words):
    cdef Py_ssize_t m = words.shape[0]
    cdef Py_ssize_t w = words.shape[1]
    out_arr = np.zeros(m, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef unsigned long long acc
    with nogil:
        for i in range(m):
            acc = 0
            for j in range(w):
                acc += ov3dis_popcnt64(words[i, j])
            out[i] = <long long>acc
    return out_arr


def batch_siou(const cnp.uint64_t[::1] q_support, const cnp.uint64_t[::1] q_vis,
               const cnp.uint64_t[:, ::1] supports, const cnp.uint64_t[:, ::1] vis):
    cdef Py_ssize_t m = supports.shape[0]
    cdef Py_ssize_t w = supports.shape[1]
    out_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef unsigned long long inter, denom, s, covis
    with nogil:
        for i in range(m):
            inter = 0
            denom = 0
            for j in range(w):
                s = supports[i, j]
                covis = vis[i, j] & q_vis[j]
                inter += ov3dis_popcnt64(s & q_support[j])
                denom += ov3dis_popcnt64((s | q_support[j]) & covis)
            if denom > 0:
                out[i] = <double>inter / <double>denom
    return out_arr


def pairwise_intersections(const cnp.uint64_t[:, ::1] rows):
    cdef Py_ssize_t k = rows.shape[0]
    cdef Py_ssize_t w = rows.shape[1]
    out_arr = np.zeros((k, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, j
    cdef unsigned long long acc
    with nogil:
        for r in range(k):
            for c in range(r, k):
                acc = 0
                for j in range(w):
                    acc += ov3dis_popcnt64(rows[r, j] & rows[c, j])
                out[r, c] = <long long>acc
                out[c, r] = <long long>acc
    return out_arr
