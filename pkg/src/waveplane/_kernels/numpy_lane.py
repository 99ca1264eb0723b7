"""Vectorized numpy implementations of the hot kernels.

Reference lane: always available, used as the ground truth in lane-parity
tests. All functions take and return float64 arrays.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def corr_down(xe, f, start, n_out):
    """Correlate ``xe`` (m_ext, K) with ``f`` along axis 0, take every second
    valid output row starting at ``start``. Returns (n_out, K)."""
    w = sliding_window_view(xe, len(f), axis=0)  # (m_ext-F+1, K, F)
    sel = w[start:start + 2 * n_out:2]
    return np.einsum("tkf,f->tk", sel, f, optimize=True)


def up_conv(ce, f, off, n):
    """Zero-upsample ``ce`` (me, K) by 2 along axis 0, convolve fully with
    ``f``, return rows [off, off+n). Returns (n, K)."""
    me, k = ce.shape
    F = len(f)
    u = np.zeros((2 * me - 1 + 2 * (F - 1), k))
    u[F - 1:F - 1 + 2 * me - 1:2] = ce
    w = sliding_window_view(u, F, axis=0)  # (2*me-1+F-1, K, F)
    y = np.einsum("tkf,f->tk", w[off:off + n], f[::-1].copy(), optimize=True)
    return y


def up_conv_adj(g, f, off, me):
    """Adjoint of ``up_conv``: scatter ``g`` (n, K) back to (me, K)."""
    n, k = g.shape
    F = len(f)
    full = 2 * me - 1 + F - 1
    y = np.zeros((full, k))
    y[off:off + n] = g
    w = sliding_window_view(y, F, axis=0)  # (2*me-1, K, F)
    ue = np.einsum("tkf,f->tk", w, f, optimize=True)
    return ue[0::2]


def bilinear_gather(plane, fx, fy):
    """Sample ``plane`` (h, w, c) at continuous texel coords (fx, fy), where
    fx indexes axis 0 and fy axis 1; integer coords hit texel centers.
    Footprint corners clamp to the edge. Returns (p, c)."""
    h, w, _ = plane.shape
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = fx - x0
    ty = fy - y0
    x0c = np.clip(x0, 0, h - 1)
    x1c = np.clip(x0 + 1, 0, h - 1)
    y0c = np.clip(y0, 0, w - 1)
    y1c = np.clip(y0 + 1, 0, w - 1)
    tx = tx[:, None]
    ty = ty[:, None]
    return ((1 - tx) * (1 - ty) * plane[x0c, y0c]
            + (1 - tx) * ty * plane[x0c, y1c]
            + tx * (1 - ty) * plane[x1c, y0c]
            + tx * ty * plane[x1c, y1c])


def bilinear_scatter(grad, fx, fy, h, w):
    """Adjoint of ``bilinear_gather``: accumulate ``grad`` (p, c) into a
    zero (h, w, c) plane at the same clamped footprints."""
    c = grad.shape[1]
    out = np.zeros((h, w, c))
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = (fx - x0)[:, None]
    ty = (fy - y0)[:, None]
    x0c = np.clip(x0, 0, h - 1)
    x1c = np.clip(x0 + 1, 0, h - 1)
    y0c = np.clip(y0, 0, w - 1)
    y1c = np.clip(y0 + 1, 0, w - 1)
    np.add.at(out, (x0c, y0c), (1 - tx) * (1 - ty) * grad)
    np.add.at(out, (x0c, y1c), (1 - tx) * ty * grad)
    np.add.at(out, (x1c, y0c), tx * (1 - ty) * grad)
    np.add.at(out, (x1c, y1c), tx * ty * grad)
    return out


def composite_fwd(sigma, rgb, delta, bg):
    """Accumulate colors along rays.

    sigma (r, n), rgb (r, n, 3), delta (r, n), bg (3,). Returns
    (color (r, 3), weights (r, n), t_res (r,)): per-sample weights
    w_i = T_i (1 - exp(-sigma_i delta_i)) with T the transmittance up to
    sample i, and t_res the residual transmittance blending the background.
    """
    tau = sigma * delta
    acc = np.cumsum(tau, axis=1)
    t_in = np.exp(-(acc - tau))          # transmittance entering each sample
    weights = t_in * (-np.expm1(-tau))
    t_res = np.exp(-acc[:, -1]) if tau.shape[1] else np.ones(tau.shape[0])
    color = np.einsum("rn,rnc->rc", weights, rgb) + t_res[:, None] * bg
    return color, weights, t_res


def composite_bwd(sigma, rgb, delta, bg, weights, t_res, gcolor):
    """Reverse pass of ``composite_fwd`` for upstream ``gcolor`` (r, 3).

    Returns (dsigma (r, n), drgb (r, n, 3)).
    """
    drgb = weights[:, :, None] * gcolor[:, None, :]
    dot = np.einsum("rnc,rc->rn", rgb, gcolor)      # <gcolor, c_i>
    wdot = weights * dot
    # suffix sum over samples strictly after i
    suffix = np.cumsum(wdot[:, ::-1], axis=1)[:, ::-1] - wdot
    tau = sigma * delta
    acc = np.cumsum(tau, axis=1)
    t_in = np.exp(-(acc - tau))
    bgdot = np.einsum("c,rc->r", bg, gcolor)
    dsigma = delta * (t_in * np.exp(-tau) * dot - suffix
                      - t_res[:, None] * bgdot[:, None])
    return dsigma, drgb
