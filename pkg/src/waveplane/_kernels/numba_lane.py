"""Numba JIT implementations of the hot kernels.

Signature-compatible with ``numpy_lane``; loops are kept serial so results
are deterministic and independent of thread count. No fastmath: these
kernels must match the numpy lane to near machine precision.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def corr_down(xe, f, start, n_out):
    m_ext, k = xe.shape
    F = f.shape[0]
    out = np.zeros((n_out, k))
    for t in range(n_out):
        base = start + 2 * t
        for j in range(F):
            w = f[j]
            row = base + j
            for c in range(k):
                out[t, c] += w * xe[row, c]
    return out


@njit(cache=True)
def up_conv(ce, f, off, n):
    me, k = ce.shape
    F = f.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        t = i + off
        # contributions u[2j] * f[t - 2j] with 0 <= t - 2j < F
        jlo = (t - F + 2) // 2 if t - F + 1 > 0 else 0
        jhi = t // 2
        if jhi > me - 1:
            jhi = me - 1
        for j in range(jlo, jhi + 1):
            w = f[t - 2 * j]
            for c in range(k):
                out[i, c] += w * ce[j, c]
    return out


@njit(cache=True)
def up_conv_adj(g, f, off, me):
    n, k = g.shape
    F = f.shape[0]
    out = np.zeros((me, k))
    for j in range(me):
        # adjoint: out[j] = sum_i g[i] * f[i + off - 2j] over valid taps
        for u in range(F):
            i = 2 * j - off + u
            if 0 <= i < n:
                w = f[u]
                for c in range(k):
                    out[j, c] += w * g[i, c]
    return out


@njit(cache=True)
def bilinear_gather(plane, fx, fy):
    h, w, c = plane.shape
    p = fx.shape[0]
    out = np.zeros((p, c))
    for i in range(p):
        x0 = int(np.floor(fx[i]))
        y0 = int(np.floor(fy[i]))
        tx = fx[i] - x0
        ty = fy[i] - y0
        x0c = min(max(x0, 0), h - 1)
        x1c = min(max(x0 + 1, 0), h - 1)
        y0c = min(max(y0, 0), w - 1)
        y1c = min(max(y0 + 1, 0), w - 1)
        w00 = (1.0 - tx) * (1.0 - ty)
        w01 = (1.0 - tx) * ty
        w10 = tx * (1.0 - ty)
        w11 = tx * ty
        for ch in range(c):
            out[i, ch] = (w00 * plane[x0c, y0c, ch] + w01 * plane[x0c, y1c, ch]
                          + w10 * plane[x1c, y0c, ch] + w11 * plane[x1c, y1c, ch])
    return out


@njit(cache=True)
def bilinear_scatter(grad, fx, fy, h, w):
    p, c = grad.shape
    out = np.zeros((h, w, c))
    for i in range(p):
        x0 = int(np.floor(fx[i]))
        y0 = int(np.floor(fy[i]))
        tx = fx[i] - x0
        ty = fy[i] - y0
        x0c = min(max(x0, 0), h - 1)
        x1c = min(max(x0 + 1, 0), h - 1)
        y0c = min(max(y0, 0), w - 1)
        y1c = min(max(y0 + 1, 0), w - 1)
        w00 = (1.0 - tx) * (1.0 - ty)
        w01 = (1.0 - tx) * ty
        w10 = tx * (1.0 - ty)
        w11 = tx * ty
        for ch in range(c):
            g = grad[i, ch]
            out[x0c, y0c, ch] += w00 * g
            out[x0c, y1c, ch] += w01 * g
            out[x1c, y0c, ch] += w10 * g
            out[x1c, y1c, ch] += w11 * g
    return out


@njit(cache=True)
def composite_fwd(sigma, rgb, delta, bg):
    r, n = sigma.shape
    color = np.zeros((r, 3))
    weights = np.zeros((r, n))
    t_res = np.ones(r)
    for i in range(r):
        t = 1.0
        for j in range(n):
            tau = sigma[i, j] * delta[i, j]
            a = -np.expm1(-tau)
            wgt = t * a
            weights[i, j] = wgt
            for ch in range(3):
                color[i, ch] += wgt * rgb[i, j, ch]
            t *= np.exp(-tau)
        t_res[i] = t
        for ch in range(3):
            color[i, ch] += t * bg[ch]
    return color, weights, t_res


@njit(cache=True)
def composite_bwd(sigma, rgb, delta, bg, weights, t_res, gcolor):
    r, n = sigma.shape
    dsigma = np.zeros((r, n))
    drgb = np.zeros((r, n, 3))
    for i in range(r):
        bgdot = 0.0
        for ch in range(3):
            bgdot += bg[ch] * gcolor[i, ch]
        dots = np.zeros(n)
        for j in range(n):
            d = 0.0
            for ch in range(3):
                d += rgb[i, j, ch] * gcolor[i, ch]
            dots[j] = d
            drgb[i, j, 0] = weights[i, j] * gcolor[i, 0]
            drgb[i, j, 1] = weights[i, j] * gcolor[i, 1]
            drgb[i, j, 2] = weights[i, j] * gcolor[i, 2]
        acc = 0.0
        t_ins = np.zeros(n)
        for j in range(n):
            t_ins[j] = np.exp(-acc)
            acc += sigma[i, j] * delta[i, j]
        suffix = 0.0
        for j in range(n - 1, -1, -1):
            tau = sigma[i, j] * delta[i, j]
            t_out = t_ins[j] * np.exp(-tau)
            dsigma[i, j] = delta[i, j] * (t_out * dots[j] - suffix
                                          - t_res[i] * bgdot)
            suffix += weights[i, j] * dots[j]
    return dsigma, drgb
