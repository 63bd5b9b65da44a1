# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rotated-box overlap and ray casting kernels.

Mirrors ``_pykernels`` operation for operation so both backends agree to
rounding.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, INFINITY

cnp.import_array()

cdef double EPS = 1e-9
DEF MAXV = 32


cdef inline void _footprint(double cx, double cy, double l, double w, double yaw,
                            double* out) noexcept nogil:
    cdef double c = cos(yaw), s = sin(yaw)
    cdef double lx[4]
    cdef double ly[4]
    cdef int i
    lx[0] = 0.5 * l; ly[0] = -0.5 * w
    lx[1] = 0.5 * l; ly[1] = 0.5 * w
    lx[2] = -0.5 * l; ly[2] = 0.5 * w
    lx[3] = -0.5 * l; ly[3] = -0.5 * w
    for i in range(4):
        out[2 * i] = cx + c * lx[i] - s * ly[i]
        out[2 * i + 1] = cy + s * lx[i] + c * ly[i]


cdef inline double _area(double* p, int n) noexcept nogil:
    cdef double acc = 0.0
    cdef int i, j
    if n < 3:
        return 0.0
    for i in range(n):
        j = (i + 1) % n
        acc += p[2 * i] * p[2 * j + 1] - p[2 * j] * p[2 * i + 1]
    return 0.5 * acc


cdef double _intersection(double* pa, double* pb) noexcept nogil:
    cdef double buf0[2 * MAXV]
    cdef double buf1[2 * MAXV]
    cdef double* src = buf0
    cdef double* dst = buf1
    cdef double* tmp
    cdef int n = 4, m, i, j, k
    cdef double ax, ay, bx, by, ex, ey, px, py, qx, qy, sp, sq, t
    cdef bint p_in, q_in
    for i in range(8):
        src[i] = pa[i]
    for i in range(4):
        if n == 0:
            break
        ax = pb[2 * i]; ay = pb[2 * i + 1]
        bx = pb[2 * ((i + 1) % 4)]; by = pb[2 * ((i + 1) % 4) + 1]
        ex = bx - ax; ey = by - ay
        m = 0
        for j in range(n):
            k = (j + 1) % n
            px = src[2 * j]; py = src[2 * j + 1]
            qx = src[2 * k]; qy = src[2 * k + 1]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            p_in = sp >= -EPS
            q_in = sq >= -EPS
            if p_in and m < MAXV:
                dst[2 * m] = px; dst[2 * m + 1] = py
                m += 1
            if p_in != q_in and m < MAXV:
                t = sp / (sp - sq)
                dst[2 * m] = px + t * (qx - px)
                dst[2 * m + 1] = py + t * (qy - py)
                m += 1
        tmp = src; src = dst; dst = tmp
        n = m
    t = _area(src, n)
    return t if t > 0.0 else 0.0


cdef double _bev_inter(const double[:] a, const double[:] b) noexcept nogil:
    cdef double pa[8]
    cdef double pb[8]
    _footprint(a[0], a[1], a[4], a[5], a[6], pa)
    _footprint(b[0], b[1], b[4], b[5], b[6], pb)
    return _intersection(pa, pb)


def bev_intersection(a, b):
    cdef double[:] av = np.ascontiguousarray(a, dtype=np.float64).reshape(7)
    cdef double[:] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(7)
    return _bev_inter(av, bv)


def bev_iou_pairs(a, b):
    cdef double[:, :] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 7)
    cdef double[:, :] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 7)
    cdef Py_ssize_t n = A.shape[0], i
    out = np.zeros(n)
    cdef double[:] o = out
    cdef double area_a, area_b, inter, union
    with nogil:
        for i in range(n):
            area_a = A[i, 4] * A[i, 5]
            area_b = B[i, 4] * B[i, 5]
            if area_a <= 0 or area_b <= 0:
                continue
            inter = _bev_inter(A[i], B[i])
            union = area_a + area_b - inter
            if union > 0:
                o[i] = min(max(inter / union, 0.0), 1.0)
    return out


def iou3d_pairs(a, b):
    cdef double[:, :] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 7)
    cdef double[:, :] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 7)
    cdef Py_ssize_t n = A.shape[0], i
    out = np.zeros(n)
    cdef double[:] o = out
    cdef double vol_a, vol_b, zo, inter, union
    with nogil:
        for i in range(n):
            vol_a = A[i, 3] * A[i, 4] * A[i, 5]
            vol_b = B[i, 3] * B[i, 4] * B[i, 5]
            if vol_a <= 0 or vol_b <= 0:
                continue
            zo = (min(A[i, 2] + 0.5 * A[i, 3], B[i, 2] + 0.5 * B[i, 3])
                  - max(A[i, 2] - 0.5 * A[i, 3], B[i, 2] - 0.5 * B[i, 3]))
            if zo <= 0:
                continue
            inter = _bev_inter(A[i], B[i]) * zo
            union = vol_a + vol_b - inter
            if union > 0:
                o[i] = min(max(inter / union, 0.0), 1.0)
    return out


def raycast(origin, dirs, boxes, double ground_z, double max_range):
    cdef double[:] O = np.ascontiguousarray(origin, dtype=np.float64).reshape(3)
    cdef double[:, :] D = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    cdef double[:, :] Bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 7)
    cdef Py_ssize_t n = D.shape[0], nb = Bx.shape[0], r, k
    t_out = np.full(n, np.inf)
    hit_out = np.full(n, -2, dtype=np.int64)
    cdef double[:] T = t_out
    cdef long long[:] H = hit_out
    cdef double best, tg, c, s, ox, oy, oz, lo[3], ld[3], half[3], tmin, tmax, t1, t2, lo_t, hi_t
    cdef long long hit
    cdef int ax
    cdef bint alive
    with nogil:
        for r in range(n):
            best = INFINITY
            hit = -2
            if D[r, 2] < 0:
                tg = (ground_z - O[2]) / D[r, 2]
                if tg > EPS and tg <= max_range:
                    best = tg
                    hit = -1
            for k in range(nb):
                c = cos(Bx[k, 6]); s = sin(Bx[k, 6])
                ox = O[0] - Bx[k, 0]; oy = O[1] - Bx[k, 1]; oz = O[2] - Bx[k, 2]
                lo[0] = c * ox + s * oy
                lo[1] = -s * ox + c * oy
                lo[2] = oz
                ld[0] = c * D[r, 0] + s * D[r, 1]
                ld[1] = -s * D[r, 0] + c * D[r, 1]
                ld[2] = D[r, 2]
                half[0] = 0.5 * Bx[k, 4]; half[1] = 0.5 * Bx[k, 5]; half[2] = 0.5 * Bx[k, 3]
                tmin = -INFINITY
                tmax = INFINITY
                alive = True
                for ax in range(3):
                    if fabs(ld[ax]) < 1e-15:
                        if fabs(lo[ax]) > half[ax]:
                            alive = False
                        continue
                    t1 = (-half[ax] - lo[ax]) / ld[ax]
                    t2 = (half[ax] - lo[ax]) / ld[ax]
                    lo_t = t1 if t1 < t2 else t2
                    hi_t = t2 if t1 < t2 else t1
                    if lo_t > tmin:
                        tmin = lo_t
                    if hi_t < tmax:
                        tmax = hi_t
                if alive and tmin <= tmax and tmin > EPS and tmin <= max_range and tmin < best:
                    best = tmin
                    hit = k
            T[r] = best
            H[r] = hit
    return t_out, hit_out
