# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython mirror of the pure numpy kernels.

See ``_pure.py`` for the packed curve contract. Function signatures and
semantics are identical; the parity test suite drives both backends with the
same inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, pow

cnp.import_array()

# nogil sections compare the kind codes as literal ints
TAIL_EXP = 0
TAIL_GPD = 1


cdef inline double _xlogx_m1(double x) noexcept nogil:
    if x > 0.0:
        return x * (log(x) - 1.0)
    return 0.0


cdef inline double _clip(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline Py_ssize_t _bisect_right(double[::1] arr, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if x < arr[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline Py_ssize_t _bisect_left(double[::1] arr, double x) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = arr.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def _flatten_grid(levels, d, p):
    K1, S1 = d.shape
    n = K1 * (S1 - 1) + 1
    big_d = np.empty(n)
    big_p = np.empty(n)
    big_d[0] = d[0, 0]
    big_p[0] = p[0, 0]
    big_d[1:] = np.ascontiguousarray(d)[:, 1:].reshape(-1)
    big_p[1:] = np.ascontiguousarray(p)[:, 1:].reshape(-1)
    return big_d, big_p


def eval_quantile(levels, values, d, p, int lt_kind, double lt0, double lt1,
                  int rt_kind, double rt0, double rt1, alphas):
    alphas_arr = np.ascontiguousarray(np.asarray(alphas, dtype=np.float64).reshape(-1))
    out_arr = np.empty_like(alphas_arr)
    big_d_arr, big_p_arr = _flatten_grid(levels, d, p)
    lv_arr = np.ascontiguousarray(levels, dtype=np.float64)
    vv_arr = np.ascontiguousarray(values, dtype=np.float64)

    cdef double[::1] al = alphas_arr
    cdef double[::1] out = out_arr
    cdef double[::1] big_d = big_d_arr
    cdef double[::1] big_p = big_p_arr
    cdef double[::1] lv = lv_arr
    cdef double[::1] vv = vv_arr
    cdef Py_ssize_t K = lv.shape[0]
    cdef double lam_lo = lv[0], lam_hi = lv[K - 1]
    cdef double v_lo = vv[0], v_hi = vv[K - 1]
    cdef Py_ssize_t i, j, n = al.shape[0], nd = big_d.shape[0]
    cdef double a, t, u

    with nogil:
        for i in range(n):
            a = al[i]
            if a < lam_lo:
                if lt_kind == 0:
                    out[i] = lt0 * log(a) + lt1
                else:
                    out[i] = v_lo - (lt1 / lt0) * (pow(a / lam_lo, -lt0) - 1.0)
            elif a > lam_hi:
                if rt_kind == 0:
                    out[i] = rt0 * log1p(-a) + rt1
                else:
                    t = (1.0 - a) / (1.0 - lam_hi)
                    out[i] = v_hi + (rt1 / rt0) * (pow(t, -rt0) - 1.0)
            else:
                j = _bisect_right(big_d, a) - 1
                if j < 0:
                    j = 0
                elif j > nd - 2:
                    j = nd - 2
                u = (a - big_d[j]) / (big_d[j + 1] - big_d[j])
                out[i] = big_p[j] + u * (big_p[j + 1] - big_p[j])
    return out_arr.reshape(np.shape(alphas))


def eval_cdf(levels, values, d, p, int lt_kind, double lt0, double lt1,
             int rt_kind, double rt0, double rt1, zs):
    zs_arr = np.ascontiguousarray(np.asarray(zs, dtype=np.float64).reshape(-1))
    out_arr = np.empty_like(zs_arr)
    big_d_arr, big_p_arr = _flatten_grid(levels, d, p)
    lv_arr = np.ascontiguousarray(levels, dtype=np.float64)
    vv_arr = np.ascontiguousarray(values, dtype=np.float64)

    cdef double[::1] z = zs_arr
    cdef double[::1] out = out_arr
    cdef double[::1] big_d = big_d_arr
    cdef double[::1] big_p = big_p_arr
    cdef double[::1] lv = lv_arr
    cdef double[::1] vv = vv_arr
    cdef Py_ssize_t K = lv.shape[0]
    cdef double lam_lo = lv[0], lam_hi = lv[K - 1]
    cdef double v_lo = vv[0], v_hi = vv[K - 1]
    cdef Py_ssize_t i, j, n = z.shape[0]
    cdef double zz, a

    with nogil:
        for i in range(n):
            zz = z[i]
            if zz < v_lo:
                if lt_kind == 0:
                    a = exp((zz - lt1) / lt0)
                    out[i] = a if a < lam_lo else lam_lo
                else:
                    out[i] = lam_lo * pow(1.0 + lt0 * (v_lo - zz) / lt1, -1.0 / lt0)
            elif zz > v_hi:
                if rt_kind == 0:
                    a = 1.0 - exp((zz - rt1) / rt0)
                    out[i] = a if a > lam_hi else lam_hi
                else:
                    out[i] = 1.0 - (1.0 - lam_hi) * pow(1.0 + rt0 * (zz - v_hi) / rt1, -1.0 / rt0)
            else:
                j = _bisect_left(big_p, zz)
                if j == 0:
                    out[i] = big_d[0]
                else:
                    out[i] = big_d[j - 1] + (zz - big_p[j - 1]) \
                        * (big_d[j] - big_d[j - 1]) / (big_p[j] - big_p[j - 1])
    return out_arr.reshape(np.shape(zs))


cdef inline double _crossing(double[:, :, ::1] p, double[:, :, ::1] d,
                             Py_ssize_t b, Py_ssize_t k, double lk, double lk1,
                             double z) noexcept nogil:
    cdef Py_ssize_t S = p.shape[2] - 1
    cdef Py_ssize_t lo = 0, hi = S + 1, mid, s0
    if z <= p[b, k, 0]:
        return lk
    if z >= p[b, k, S]:
        return lk1
    # binary search: first index with p[b, k, idx] >= z
    while lo < hi:
        mid = (lo + hi) // 2
        if p[b, k, mid] < z:
            lo = mid + 1
        else:
            hi = mid
    s0 = lo - 1
    return d[b, k, s0] + (z - p[b, k, s0]) \
        * (d[b, k, s0 + 1] - d[b, k, s0]) / (p[b, k, s0 + 1] - p[b, k, s0])


def crps_spline_parts(levels, d, p, double z):
    lv_arr = np.ascontiguousarray(levels, dtype=np.float64)
    d_arr = np.ascontiguousarray(d, dtype=np.float64)[None]
    p_arr = np.ascontiguousarray(p, dtype=np.float64)[None]
    cdef Py_ssize_t K1 = d_arr.shape[1], S = d_arr.shape[2] - 1
    out_arr = np.empty(K1)

    cdef double[::1] lv = lv_arr
    cdef double[:, :, ::1] dv = d_arr
    cdef double[:, :, ::1] pv = p_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, s
    cdef double lk, lk1, at, aa, bb, dd, dp, r, F, acc

    with nogil:
        for k in range(K1):
            lk = lv[k]
            lk1 = lv[k + 1]
            at = _crossing(pv, dv, 0, k, lk, lk1, z)
            acc = (lk1 * lk1 - lk * lk - 2.0 * (lk1 - at)) * (z - pv[0, k, 0])
            for s in range(S):
                aa = dv[0, k, s]
                bb = dv[0, k, s + 1]
                dd = bb - aa
                dp = pv[0, k, s + 1] - pv[0, k, s]
                r = _clip(at, aa, bb)
                F = (bb * bb * (-(2.0 / 3.0) * bb + aa + 1.0)
                     - aa * (aa * aa / 3.0 + 2.0 * bb) - r * (r - 2.0 * aa)) / dd \
                    - lk1 * lk1 + bb * bb + 2.0 * lk1 \
                    - 2.0 * (at if at > bb else bb)
                acc += dp * F
            out[k] = acc
    return out_arr


def crps_spline_grad(levels, d, p, z):
    lv_arr = np.ascontiguousarray(levels, dtype=np.float64)
    d_arr = np.ascontiguousarray(d, dtype=np.float64)
    p_arr = np.ascontiguousarray(p, dtype=np.float64)
    z_arr = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t B = d_arr.shape[0], K1 = d_arr.shape[1], S = d_arr.shape[2] - 1
    mid_arr = np.zeros(B)
    gd_arr = np.zeros_like(d_arr)
    gp_arr = np.zeros_like(p_arr)

    cdef double[::1] lv = lv_arr
    cdef double[:, :, ::1] dv = d_arr
    cdef double[:, :, ::1] pv = p_arr
    cdef double[::1] zv = z_arr
    cdef double[::1] mid = mid_arr
    cdef double[:, :, ::1] gd = gd_arr
    cdef double[:, :, ::1] gp = gp_arr
    cdef Py_ssize_t b, k, s
    cdef double zz, lk, lk1, at, aa, bb, dd, dp, r, F, acc
    cdef double W0, W1, Ip, I1mu

    with nogil:
        for b in range(B):
            zz = zv[b]
            acc = 0.0
            for k in range(K1):
                lk = lv[k]
                lk1 = lv[k + 1]
                at = _crossing(pv, dv, b, k, lk, lk1, zz)
                acc += (lk1 * lk1 - lk * lk - 2.0 * (lk1 - at)) * (zz - pv[b, k, 0])
                for s in range(S):
                    aa = dv[b, k, s]
                    bb = dv[b, k, s + 1]
                    dd = bb - aa
                    dp = pv[b, k, s + 1] - pv[b, k, s]
                    r = _clip(at, aa, bb)
                    F = (bb * bb * (-(2.0 / 3.0) * bb + aa + 1.0)
                         - aa * (aa * aa / 3.0 + 2.0 * bb) - r * (r - 2.0 * aa)) / dd \
                        - lk1 * lk1 + bb * bb + 2.0 * lk1 \
                        - 2.0 * (at if at > bb else bb)
                    acc += dp * F
                    W0 = (bb * bb - aa * aa) - 2.0 * (bb - r)
                    W1 = (2.0 / 3.0) * (bb * bb * bb - aa * aa * aa) - (bb * bb - r * r)
                    Ip = (W1 - aa * W0) / dd
                    I1mu = W0 - Ip
                    gp[b, k, s] -= I1mu
                    gp[b, k, s + 1] -= Ip
                    gd[b, k, s] -= dp * (W1 - bb * W0) / (dd * dd)
                    gd[b, k, s + 1] += dp * (W1 - aa * W0) / (dd * dd)
            mid[b] = acc
    return mid_arr, gd_arr, gp_arr


cdef inline double _exp_tail_left(double at, double a, double b, double z,
                                  double *ga, double *gb) noexcept nogil:
    cdef double log_at = log(at)
    cdef double q_at = a * log_at + b
    cdef double e, atil, base
    if z >= q_at:
        atil = at
    else:
        e = (z - b) / a
        atil = exp(e if e < 0.0 else 0.0)
    base = at * at - 2.0 * at + 2.0 * atil
    ga[0] = at * at * (0.5 - log_at) + 2.0 * at * (log_at - 1.0) - 2.0 * _xlogx_m1(atil)
    gb[0] = -base
    return (z - b) * base + a * ga[0]


cdef inline double _exp_tail_right(double tr, double a, double b, double z,
                                   double *ga, double *gb) noexcept nogil:
    cdef double log_tr = log(tr)
    cdef double q_at = a * log_tr + b
    cdef double e, ttil, base, bracket
    if z <= q_at:
        ttil = tr
    else:
        e = (z - b) / a
        ttil = exp(e if e < 0.0 else 0.0)
    base = 2.0 * tr - tr * tr - 2.0 * ttil
    bracket = _xlogx_m1(tr) - 0.5 * tr * tr * log_tr + 0.25 * tr * tr - _xlogx_m1(ttil)
    ga[0] = -2.0 * bracket
    gb[0] = -base
    return (z - b) * base - 2.0 * a * bracket


def crps_exp_tail(int side, double lam, double a, double b, double z):
    cdef double ga = 0.0, gb = 0.0
    if side == 0:
        return _exp_tail_left(lam, a, b, z, &ga, &gb)
    return _exp_tail_right(1.0 - lam, a, b, z, &ga, &gb)


def crps_exp_tail_grad(int side, double lam, a, b, z):
    a_arr = np.ascontiguousarray(a, dtype=np.float64)
    b_arr = np.ascontiguousarray(b, dtype=np.float64)
    z_arr = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t B = a_arr.shape[0]
    val_arr = np.empty(B)
    ga_arr = np.empty(B)
    gb_arr = np.empty(B)

    cdef double[::1] av = a_arr
    cdef double[::1] bv = b_arr
    cdef double[::1] zv = z_arr
    cdef double[::1] val = val_arr
    cdef double[::1] ga = ga_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i
    cdef double g1, g2

    with nogil:
        if side == 0:
            for i in range(B):
                val[i] = _exp_tail_left(lam, av[i], bv[i], zv[i], &g1, &g2)
                ga[i] = g1
                gb[i] = g2
        else:
            for i in range(B):
                val[i] = _exp_tail_right(1.0 - lam, av[i], bv[i], zv[i], &g1, &g2)
                ga[i] = g1
                gb[i] = g2
    return val_arr, ga_arr, gb_arr
