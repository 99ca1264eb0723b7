"""Image-quality metrics beyond PSNR (which lives with the trainer)."""
import numpy as np


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter2_valid(img, w):
    """Separable 'valid' correlation of (H, W) with a 1D window."""
    from numpy.lib.stride_tricks import sliding_window_view
    rows = sliding_window_view(img, len(w), axis=1) @ w
    return (sliding_window_view(rows, len(w), axis=0) @ w)


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, peak=1.0):
    """Mean structural similarity with a Gaussian window, averaged over
    channels; inputs are (H, W, 3) in [0, peak]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes disagree: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < window_size:
        raise ValueError("image smaller than the SSIM window")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x = a[:, :, ch]
        y = b[:, :, ch]
        mx = _filter2_valid(x, w)
        my = _filter2_valid(y, w)
        vx = _filter2_valid(x * x, w) - mx * mx
        vy = _filter2_valid(y * y, w) - my * my
        cxy = _filter2_valid(x * y, w) - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
