"""Reference numpy implementation of the hot numerical kernels.

Both kernel backends (this module and the Cython mirror ``_core``) operate on
a packed curve representation:

- ``levels``: (K,) strictly increasing knot levels in (0, 1)
- ``values``: (K,) non-decreasing knot values
- ``d``, ``p``: (K-1, S+1) spline knot positions / values per segment, with
  ``d[k, 0] == levels[k]``, ``d[k, S] == levels[k+1]`` and the same pinning
  for ``p`` against ``values``
- tails: ``kind`` 0 is exponential with parameters ``(a, b)`` so that the
  left tail is ``a*log(alpha) + b`` and the right tail ``a*log(1-alpha) + b``;
  ``kind`` 1 is generalized Pareto with parameters ``(eta, mu)`` anchored at
  the outermost knot.

Batched functions take a leading B axis on ``values``/``d``/``p`` and on the
tail parameters; ``levels`` is always shared.
"""

import numpy as np

TAIL_EXP = 0
TAIL_GPD = 1

_TINY = np.finfo(np.float64).tiny


def _xlogx_m1(x):
    """x * (log(x) - 1) extended continuously with value 0 at x = 0."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.maximum(x, _TINY)
    return np.where(x > 0.0, x * (np.log(safe) - 1.0), 0.0)


def _flatten_grid(levels, d, p):
    """Concatenate per-segment spline knots into one global monotone grid.

    Adjacent segments share their boundary knot; the duplicate is dropped.
    """
    K1, S1 = d.shape
    n = K1 * (S1 - 1) + 1
    big_d = np.empty(n)
    big_p = np.empty(n)
    big_d[0] = d[0, 0]
    big_p[0] = p[0, 0]
    big_d[1:] = d[:, 1:].reshape(-1)
    big_p[1:] = p[:, 1:].reshape(-1)
    return big_d, big_p


def eval_quantile(levels, values, d, p, lt_kind, lt0, lt1, rt_kind, rt0, rt1, alphas):
    """Evaluate the quantile function at levels ``alphas`` in (0, 1)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    out = np.empty(alphas.shape)
    lam_lo = levels[0]
    lam_hi = levels[-1]

    left = alphas < lam_lo
    right = alphas > lam_hi
    mid = ~(left | right)

    if left.any():
        al = alphas[left]
        if lt_kind == TAIL_EXP:
            out[left] = lt0 * np.log(al) + lt1
        else:
            out[left] = values[0] - (lt1 / lt0) * ((al / lam_lo) ** (-lt0) - 1.0)
    if right.any():
        ar = alphas[right]
        if rt_kind == TAIL_EXP:
            out[right] = rt0 * np.log1p(-ar) + rt1
        else:
            t = (1.0 - ar) / (1.0 - lam_hi)
            out[right] = values[-1] + (rt1 / rt0) * (t ** (-rt0) - 1.0)
    if mid.any():
        am = alphas[mid]
        big_d, big_p = _flatten_grid(levels, d, p)
        # a level sitting exactly on a knot belongs to the piece on its right
        j = np.searchsorted(big_d, am, side="right") - 1
        j = np.clip(j, 0, big_d.size - 2)
        lo_d = big_d[j]
        dd = big_d[j + 1] - lo_d
        u = (am - lo_d) / dd
        out[mid] = big_p[j] + u * (big_p[j + 1] - big_p[j])
    return out


def eval_cdf(levels, values, d, p, lt_kind, lt0, lt1, rt_kind, rt0, rt1, zs):
    """Invert the quantile function; flat stretches map to their leftmost level."""
    zs = np.asarray(zs, dtype=np.float64)
    out = np.empty(zs.shape)
    lam_lo = levels[0]
    lam_hi = levels[-1]

    left = zs < values[0]
    right = zs > values[-1]
    mid = ~(left | right)

    if left.any():
        zl = zs[left]
        if lt_kind == TAIL_EXP:
            out[left] = np.minimum(np.exp((zl - lt1) / lt0), lam_lo)
        else:
            out[left] = lam_lo * (1.0 + lt0 * (values[0] - zl) / lt1) ** (-1.0 / lt0)
    if right.any():
        zr = zs[right]
        if rt_kind == TAIL_EXP:
            out[right] = np.maximum(1.0 - np.exp((zr - rt1) / rt0), lam_hi)
        else:
            out[right] = 1.0 - (1.0 - lam_hi) * (1.0 + rt0 * (zr - values[-1]) / rt1) ** (-1.0 / rt0)
    if mid.any():
        zm = zs[mid]
        big_d, big_p = _flatten_grid(levels, d, p)
        j = np.searchsorted(big_p, zm, side="left")
        res = np.empty(zm.shape)
        at0 = j == 0
        res[at0] = big_d[0]
        ji = j[~at0]
        dp = big_p[ji] - big_p[ji - 1]
        res[~at0] = big_d[ji - 1] + (zm[~at0] - big_p[ji - 1]) * (big_d[ji] - big_d[ji - 1]) / dp
        out[mid] = res
    return out


def _crossing_levels(levels, d, p, z):
    """Per-segment crossing level alpha~ for targets ``z``.

    ``d``/``p`` have shape (..., K-1, S+1) and ``z`` broadcasts against the
    leading axes. Returns an array of shape (..., K-1).
    """
    lk = levels[:-1]
    lk1 = levels[1:]
    p0 = p[..., 0]
    pS = p[..., -1]
    z = np.asarray(z, dtype=np.float64)
    zb = z[..., None] if z.ndim == p0.ndim - 1 else z

    cnt = np.sum(p < zb[..., None], axis=-1)
    s0 = np.clip(cnt - 1, 0, p.shape[-1] - 2)
    ps0 = np.take_along_axis(p, s0[..., None], axis=-1)[..., 0]
    ps1 = np.take_along_axis(p, s0[..., None] + 1, axis=-1)[..., 0]
    ds0 = np.take_along_axis(d, s0[..., None], axis=-1)[..., 0]
    ds1 = np.take_along_axis(d, s0[..., None] + 1, axis=-1)[..., 0]
    dp0 = ps1 - ps0
    safe = np.where(dp0 > 0.0, dp0, 1.0)
    interior = ds0 + (zb - ps0) * (ds1 - ds0) / safe
    return np.where(zb <= p0, lk, np.where(zb >= pS, lk1, interior))


def _segment_crps(levels, d, p, atil, z):
    """Closed-form CRPS contribution of every spline segment.

    Shapes follow :func:`_crossing_levels`; returns (..., K-1).
    """
    lk = levels[:-1]
    lk1 = levels[1:]
    z = np.asarray(z, dtype=np.float64)
    zb = z[..., None] if z.ndim == atil.ndim - 1 else z

    a = d[..., :-1]
    b = d[..., 1:]
    dp = np.diff(p, axis=-1)
    dd = np.diff(d, axis=-1)
    at = atil[..., None]
    r = np.clip(at, a, b)
    F = (
        (b * b * (-(2.0 / 3.0) * b + a + 1.0) - a * (a * a / 3.0 + 2.0 * b) - r * (r - 2.0 * a)) / dd
        - lk1[..., None] ** 2
        + b * b
        + 2.0 * lk1[..., None]
        - 2.0 * np.maximum(at, b)
    )
    head = (lk1 ** 2 - lk ** 2 - 2.0 * (lk1 - atil)) * (zb - p[..., 0])
    return head + np.sum(dp * F, axis=-1)


def crps_spline_parts(levels, d, p, z):
    """Per-segment CRPS contributions of the spline region for scalar ``z``."""
    atil = _crossing_levels(levels, d, p, float(z))
    return _segment_crps(levels, d, p, atil, float(z))


def crps_spline_grad(levels, d, p, z):
    """Batched spline-region CRPS with gradients.

    ``d``/``p``: (B, K-1, S+1), ``z``: (B,). Returns ``(mid, gd, gp)`` where
    ``mid`` is the summed spline-region CRPS per sample and ``gd``/``gp`` are
    gradients with respect to every spline knot (boundary columns included;
    the caller folds those into knot values / discards the pinned positions).
    """
    z = np.asarray(z, dtype=np.float64)
    atil = _crossing_levels(levels, d, p, z)
    mid = _segment_crps(levels, d, p, atil, z).sum(axis=-1)

    a = d[..., :-1]
    b = d[..., 1:]
    dp = np.diff(p, axis=-1)
    dd = np.diff(d, axis=-1)
    r = np.clip(atil[..., None], a, b)

    # integrals of the pinball weight w(alpha) = 2*(alpha - 1{alpha > atil})
    # against 1 and alpha over each linear piece, split at the crossing
    W0 = (b * b - a * a) - 2.0 * (b - r)
    W1 = (2.0 / 3.0) * (b ** 3 - a ** 3) - (b * b - r * r)
    Ip = (W1 - a * W0) / dd
    I1mu = W0 - Ip

    gp = np.zeros_like(p)
    gp[..., :-1] -= I1mu
    gp[..., 1:] -= Ip

    gd = np.zeros_like(d)
    gd[..., :-1] -= dp * (W1 - b * W0) / (dd * dd)
    gd[..., 1:] += dp * (W1 - a * W0) / (dd * dd)
    return mid, gd, gp


def crps_exp_tail(side, lam, a, b, z):
    """CRPS contribution of one exponential tail for scalar inputs."""
    val, _, _ = crps_exp_tail_grad(side, lam, np.float64(a), np.float64(b), np.float64(z))
    return float(val)


def crps_exp_tail_grad(side, lam, a, b, z):
    """Exponential-tail CRPS with gradients w.r.t. ``a`` and ``b``.

    ``side`` 0 is the left tail on (0, lam], 1 the right tail on [lam, 1).
    ``a``/``b``/``z`` broadcast together.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if side == 0:
        at = lam
        log_at = np.log(at)
        q_at = a * log_at + b
        atil = np.where(z >= q_at, at, np.exp(np.minimum((z - b) / a, 0.0)))
        base = at * at - 2.0 * at + 2.0 * atil
        ga = at * at * (0.5 - log_at) + 2.0 * at * (log_at - 1.0) - 2.0 * _xlogx_m1(atil)
        val = (z - b) * base + a * ga
        gb = -base
        return val, ga, gb
    tr = 1.0 - lam
    log_tr = np.log(tr)
    q_at = a * log_tr + b
    ttil = np.where(z <= q_at, tr, np.exp(np.minimum((z - b) / a, 0.0)))
    base = 2.0 * tr - tr * tr - 2.0 * ttil
    bracket = _xlogx_m1(tr) - 0.5 * tr * tr * log_tr + 0.25 * tr * tr - _xlogx_m1(ttil)
    val = (z - b) * base - 2.0 * a * bracket
    ga = -2.0 * bracket
    gb = -base
    return val, ga, gb
