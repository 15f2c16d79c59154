"""Fused per-frame objective/gradient kernel for co-alignment.

Slot data for frame ``i`` is the row block ``flat[starts[i]*P : starts[i+1]*P]``
in slot-major order (``j * P + p``).

For one frame with N predictions ``a_j = s_j d_j + t_j`` and their mean ``m``,
the inverse-depth data term is ``S / mu`` with

    S  = sum_j w_j mean_p |a_jp - m_p|,     mu = mean_p |m_p|

and its derivative w.r.t. ``a_lp`` is

    (1/P) [ (w_l sgn(r_lp) - c_p) / mu - S sgn(m_p) / (N mu^2) ],
    c_p = (1/N) sum_j w_j sgn(r_jp).

The depth-space term has the same form on ``b_j = 1/a_j`` and picks up the
factor ``db/da = -b^2``. None of the pixel sums feeding the gradient depend
on ``mu``, so pixels are processed in cache-sized tiles and ``mu`` is applied
once per frame at the end.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# reassociation lets the pixel reductions vectorize; no NaN/Inf assumptions
_FASTMATH = {"reassoc", "contract", "nsz"}
TILE = 256

# per-slot accumulator columns
_ABSR, _US, _UT, _VS, _VT = 0, 1, 2, 3, 4


@njit(inline="always", fastmath=_FASTMATH)
def _sgn(x):
    return 1.0 if x > 0.0 else (-1.0 if x < 0.0 else 0.0)


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def _finish(acc, sum_abs, w, nslot, n_pix, g_scale, g_shift, a0):
    inv_p = 1.0 / n_pix
    mu = sum_abs * inv_p
    big_s = 0.0
    for j in range(nslot):
        big_s += w[j] * acc[j, _ABSR]
    big_s *= inv_p
    kmu = big_s / (mu * mu * nslot)
    for j in range(nslot):
        g_scale[a0 + j] += inv_p * (acc[j, _US] / mu - kmu * acc[j, _VS])
        g_shift[a0 + j] += inv_p * (acc[j, _UT] / mu - kmu * acc[j, _VT])
    return big_s / mu


@njit(cache=True, nogil=True, fastmath=_FASTMATH)
def frames_objective_grad(
    flat, starts, slot_snip, slot_w, scale, shift, eps, use_depth, n_pix,
    f0, f1, frame_obj, g_scale, g_shift, clamped,
):
    """Evaluate frames ``f0..f1-1``; writes per-frame objective and per-slot grads.

    Both data terms share three sweeps per pixel tile: values and means,
    weighted sign sums ``c_p``, then the per-slot pixel sums.
    """
    max_n = 1
    for i in range(f0, f1):
        max_n = max(max_n, starts[i + 1] - starts[i])
    avals = np.empty(max_n * TILE)
    bvals = np.empty(max_n * TILE)
    qvals = np.empty(max_n * TILE)
    mean_a = np.empty(TILE)
    mean_b = np.empty(TILE)
    csum_a = np.empty(TILE)
    csum_b = np.empty(TILE)
    w = np.empty(max_n)
    sc = np.empty(max_n)
    sh = np.empty(max_n)
    acc_a = np.empty((max_n, 5))
    acc_b = np.empty((max_n, 5))

    for i in range(f0, f1):
        a0 = starts[i]
        nslot = starts[i + 1] - a0
        frame_obj[i] = 0.0
        clamped[i] = 0
        for j in range(nslot):
            g_scale[a0 + j] = 0.0
            g_shift[a0 + j] = 0.0
        if nslot <= 1:
            # a lone prediction equals its own mean: zero residual, zero gradient
            continue
        inv_n = 1.0 / nslot
        off = a0 * n_pix
        for j in range(nslot):
            k = slot_snip[a0 + j]
            sc[j] = scale[k]
            sh[j] = shift[k]
            w[j] = slot_w[a0 + j]
            for c in range(5):
                acc_a[j, c] = 0.0
                acc_b[j, c] = 0.0
        sum_abs_a = 0.0
        sum_abs_b = 0.0
        nclamp = 0

        for p0 in range(0, n_pix, TILE):
            width = min(TILE, n_pix - p0)
            for p in range(width):
                mean_a[p] = 0.0
                mean_b[p] = 0.0
                csum_a[p] = 0.0
                csum_b[p] = 0.0
            for j in range(nslot):
                base = j * width
                rbase = off + j * n_pix + p0
                sj = sc[j]
                tj = sh[j]
                for p in range(width):
                    av = sj * np.float64(flat[rbase + p]) + tj
                    avals[base + p] = av
                    mean_a[p] += av
                if use_depth:
                    # a bare reciprocal loop vectorizes; fused with the rest it does not
                    for p in range(width):
                        bvals[base + p] = 1.0 / max(avals[base + p], eps)
                    for p in range(width):
                        bv = bvals[base + p]
                        ok = avals[base + p] > eps
                        # clamped pixels are constant in the parameters
                        qvals[base + p] = -bv * bv if ok else 0.0
                        nclamp += 0 if ok else 1
                        mean_b[p] += bv
            sgn_sum_a = 0.0
            sgn_sum_b = 0.0
            for p in range(width):
                mean_a[p] *= inv_n
                mean_b[p] *= inv_n
                sum_abs_a += abs(mean_a[p])
                sum_abs_b += abs(mean_b[p])
                sgn_sum_a += _sgn(mean_a[p])

            for j in range(nslot):
                base = j * width
                wj = w[j]
                if use_depth:
                    for p in range(width):
                        csum_a[p] += wj * _sgn(avals[base + p] - mean_a[p])
                        csum_b[p] += wj * _sgn(bvals[base + p] - mean_b[p])
                else:
                    for p in range(width):
                        csum_a[p] += wj * _sgn(avals[base + p] - mean_a[p])
            for p in range(width):
                csum_a[p] *= inv_n
                csum_b[p] *= inv_n

            for j in range(nslot):
                base = j * width
                rbase = off + j * n_pix + p0
                wj = w[j]
                ar = 0.0
                us = 0.0
                ut = 0.0
                vs = 0.0
                br = 0.0
                bus = 0.0
                but = 0.0
                bvs = 0.0
                bvt = 0.0
                if use_depth:
                    for p in range(width):
                        d = np.float64(flat[rbase + p])
                        r = avals[base + p] - mean_a[p]
                        ar += abs(r)
                        coef = wj * _sgn(r) - csum_a[p]
                        us += coef * d
                        ut += coef
                        vs += _sgn(mean_a[p]) * d
                        rb = bvals[base + p] - mean_b[p]
                        br += abs(rb)
                        qd = qvals[base + p]
                        cb = (wj * _sgn(rb) - csum_b[p]) * qd
                        bus += cb * d
                        but += cb
                        sq = _sgn(mean_b[p]) * qd
                        bvs += sq * d
                        bvt += sq
                else:
                    for p in range(width):
                        d = np.float64(flat[rbase + p])
                        r = avals[base + p] - mean_a[p]
                        ar += abs(r)
                        coef = wj * _sgn(r) - csum_a[p]
                        us += coef * d
                        ut += coef
                        vs += _sgn(mean_a[p]) * d
                acc_a[j, _ABSR] += ar
                acc_a[j, _US] += us
                acc_a[j, _UT] += ut
                acc_a[j, _VS] += vs
                acc_a[j, _VT] += sgn_sum_a
                acc_b[j, _ABSR] += br
                acc_b[j, _US] += bus
                acc_b[j, _UT] += but
                acc_b[j, _VS] += bvs
                acc_b[j, _VT] += bvt

        obj = _finish(acc_a, sum_abs_a, w, nslot, n_pix, g_scale, g_shift, a0)
        if use_depth:
            obj += _finish(acc_b, sum_abs_b, w, nslot, n_pix, g_scale, g_shift, a0)
            clamped[i] = nclamp
        frame_obj[i] = obj
