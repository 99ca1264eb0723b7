"""Image transport: sRGB encoding, PNG and raw-float files, box
downsampling and bicubic upscaling.

Everything in-memory is linear float64 in [0, 1]; sRGB appears only at
file boundaries.
"""
import struct

import numpy as np
from PIL import Image

_RAW_MAGIC = b"WPIM"
_RAW_VERSION = 1


def srgb_to_linear(c):
    """IEC 61966-2-1 decoding, elementwise on [0, 1]."""
    c = np.asarray(c, dtype=np.float64)
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(c):
    """IEC 61966-2-1 encoding, elementwise on [0, 1]."""
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, 1.0)
    return np.where(c <= 0.0031308, 12.92 * c,
                    1.055 * c ** (1.0 / 2.4) - 0.055)


def save_png(path, img, assume_linear=True):
    """Write an (H, W, 3) float image as 8-bit sRGB PNG."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    if assume_linear:
        img = linear_to_srgb(img)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_png(path, to_linear=True):
    """Read a PNG as (H, W, 3) float64; RGBA composites over white."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
    rgb = arr[:, :, :3]
    alpha = arr[:, :, 3:4]
    if to_linear:
        rgb = srgb_to_linear(rgb)
    return alpha * rgb + (1.0 - alpha)  # white background


def save_raw(path, img):
    """Lossless float dump: magic, version, shape, little-endian float32."""
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected (h, w, c) image, got {img.shape}")
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC)
        f.write(struct.pack("<IIII", _RAW_VERSION, *img.shape))
        f.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def load_raw(path):
    """Read a raw float dump written by ``save_raw``; returns float64."""
    with open(path, "rb") as f:
        if f.read(4) != _RAW_MAGIC:
            raise ValueError(f"{path}: not a raw image file")
        version, h, w, c = struct.unpack("<IIII", f.read(16))
        if version != _RAW_VERSION:
            raise ValueError(f"{path}: unsupported raw version {version}")
        data = np.frombuffer(f.read(4 * h * w * c), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError(f"{path}: truncated raw image")
    return data.reshape(h, w, c).astype(np.float64)


def box_downsample(img, factor):
    """Average non-overlapping factor x factor blocks."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"image {h}x{w} not divisible by factor {factor}")
    view = img.reshape(h // factor, factor, w // factor, factor, -1)
    out = view.mean(axis=(1, 3))
    return out.reshape(h // factor, w // factor, *img.shape[2:])


def bicubic_upscale(img, factor):
    """Per-channel bicubic enlargement by an integer factor."""
    img = np.asarray(img, dtype=np.float64)
    if factor < 1 or int(factor) != factor:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    h, w, c = img.shape
    out = np.empty((h * factor, w * factor, c))
    for k in range(c):
        chan = Image.fromarray(img[:, :, k].astype(np.float32), mode="F")
        big = chan.resize((w * factor, h * factor), Image.BICUBIC)
        out[:, :, k] = np.asarray(big, dtype=np.float64)
    return out
