"""Pinhole cameras, ray generation, depth sampling, transmittance-weighted
compositing and full-image rendering.

Camera convention: OpenGL axes. In camera space x points right, y up, and
the camera looks along -z. Pixel (v, u) means row v, column u; the ray for
a pixel passes through its center at (u + 0.5, v + 0.5).
"""
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import active as _k
from .field import encode_direction, field_eval
from .triplane import sample_features

WHITE = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: image size, focal length in pixels, and a 4x4
    camera-to-world matrix."""
    width: int
    height: int
    focal_px: float
    c2w: np.ndarray

    def __post_init__(self):
        c2w = np.asarray(self.c2w, dtype=np.float64)
        if c2w.shape != (4, 4) or not np.all(np.isfinite(c2w)):
            raise ValueError("c2w must be a finite 4x4 matrix")
        object.__setattr__(self, "c2w", c2w)
        if self.width <= 0 or self.height <= 0 or self.focal_px <= 0:
            raise ValueError("camera size and focal length must be positive")

    @classmethod
    def from_fov_x(cls, width, height, fov_x, c2w):
        """Build from a horizontal field of view in radians."""
        focal = 0.5 * width / math.tan(0.5 * fov_x)
        return cls(width=width, height=height, focal_px=focal, c2w=c2w)

    @property
    def rotation(self):
        return self.c2w[:3, :3]

    @property
    def position(self):
        return self.c2w[:3, 3]

    def check_rotation(self, tol=1e-6):
        """Raise unless the rotation block is orthonormal within ``tol``."""
        r = self.rotation
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > tol:
            raise ValueError(f"camera rotation not orthonormal "
                             f"(max deviation {err:.3e})")


@dataclass
class RenderOpts:
    """Knobs for ``render_image`` and ``render_rays``."""
    samples_per_ray: int = 64
    background: tuple = WHITE
    stratified: bool = False
    seed: int = 0
    chunk_rays: int = 8192
    depth: int = None          # pyramid depth; None renders full detail
    near: float = 0.0
    far: float = None
    field_override: object = None  # callable (points, dirs) -> (sigma, rgb)


def make_rays(camera, pixels=None):
    """World-space ray origins and unit directions.

    ``pixels`` is an (n, 2) integer array of (row, column) pairs; by default
    every pixel in row-major order. Returns (origins (n, 3), dirs (n, 3)).
    """
    if pixels is None:
        vv, uu = np.meshgrid(np.arange(camera.height),
                             np.arange(camera.width), indexing="ij")
        pixels = np.stack([vv.ravel(), uu.ravel()], axis=1)
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.shape[1] != 2:
        raise ValueError(f"pixels must be (n, 2), got {pixels.shape}")
    v = pixels[:, 0].astype(np.float64)
    u = pixels[:, 1].astype(np.float64)
    if (v < 0).any() or (v >= camera.height).any() \
            or (u < 0).any() or (u >= camera.width).any():
        raise ValueError("pixel coordinates out of image bounds")
    x = (u + 0.5 - 0.5 * camera.width) / camera.focal_px
    y = -(v + 0.5 - 0.5 * camera.height) / camera.focal_px
    cam = np.stack([x, y, -np.ones_like(x)], axis=1)
    dirs = cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return origins, dirs


def ray_bbox_span(origins, dirs, bbox, near=0.0, far=None):
    """Entry/exit distances of each ray against an axis-aligned box.

    Returns (t0 (n,), t1 (n,), hit (n,) bool); t0/t1 are clamped to
    [near, far] and only meaningful where ``hit``.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    # tiny stand-in keeps 0/0 out of axis-parallel rays
    safe = np.where(np.abs(d) < 1e-300, 1e-300, d)
    ta = (lo - o) / safe
    tb = (hi - o) / safe
    t0 = np.minimum(ta, tb).max(axis=1)
    t1 = np.maximum(ta, tb).min(axis=1)
    t0 = np.maximum(t0, near)
    if far is not None:
        t1 = np.minimum(t1, far)
    hit = t1 > t0
    return t0, t1, hit


def sample_depths(t0, t1, n_samples, rng=None, stratified=False):
    """Depth values along each ray: ``n_samples`` equal bins between t0 and
    t1, taking bin midpoints, or one uniform draw per bin when stratified.

    Returns (depths (r, n), delta (r, n)); delta is the constant bin width.
    """
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    width = (t1 - t0) / n_samples
    k = np.arange(n_samples, dtype=np.float64)
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        jitter = rng.random((len(t0), n_samples))
    else:
        jitter = 0.5
    depths = t0[:, None] + (k + jitter) * width[:, None]
    delta = np.broadcast_to(width[:, None], depths.shape).copy()
    return depths, delta


def composite(sigma, rgb, delta, background=WHITE):
    """Blend per-sample colors into per-ray colors.

    sigma (r, n) non-negative densities, rgb (r, n, 3), delta (r, n) bin
    widths, background (3,). Returns (color (r, 3), weights (r, n),
    t_res (r,)) where weights sum with t_res to one per ray.
    """
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    rgb = np.ascontiguousarray(rgb, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    if sigma.ndim != 2 or rgb.shape != sigma.shape + (3,) \
            or delta.shape != sigma.shape or bg.shape != (3,):
        raise ValueError("composite input shapes disagree")
    if not np.all(np.isfinite(sigma)) or (sigma < 0).any():
        raise ValueError("densities must be finite and non-negative")
    if (delta < 0).any():
        raise ValueError("bin widths must be non-negative")
    return _k.composite_fwd(sigma, rgb, delta, bg)


def composite_backward(grad_color, sigma, rgb, delta, background,
                       weights, t_res):
    """Gradients of ``composite`` w.r.t. densities and sample colors given
    an upstream (r, 3) gradient on the output color.

    ``weights`` and ``t_res`` are the values the forward pass returned.
    Returns (d_sigma (r, n), d_rgb (r, n, 3)).
    """
    g = np.ascontiguousarray(grad_color, dtype=np.float64)
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    rgb = np.ascontiguousarray(rgb, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    bg = np.ascontiguousarray(background, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    t_res = np.ascontiguousarray(t_res, dtype=np.float64)
    if g.shape != (sigma.shape[0], 3):
        raise ValueError(f"grad_color must be (r, 3), got {g.shape}")
    return _k.composite_bwd(sigma, rgb, delta, bg, weights, t_res, g)


def _shade(model, points, dirs_per_point, depth, field_override):
    """Densities and colors for flattened sample points."""
    if field_override is not None:
        sigma, rgb = field_override(points, dirs_per_point)
        return np.asarray(sigma, np.float64), np.asarray(rgb, np.float64)
    if model.mlp is None:
        raise ValueError("model has no MLP attached and no field_override "
                         "was given")
    feats = sample_features(model, points, depth=depth)
    enc = encode_direction(dirs_per_point, model.mlp.dir_bands)
    sigma, rgb, _ = field_eval(feats, enc, model.mlp)
    return sigma, rgb


def render_rays(model, origins, dirs, opts, rng=None):
    """Colors (n, 3) for a batch of rays; rays that miss the scene bbox
    return the background color."""
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    n = len(o)
    bg = np.asarray(opts.background, dtype=np.float64)
    colors = np.tile(bg, (n, 1))
    t0, t1, hit = ray_bbox_span(o, d, model.bbox, opts.near, opts.far)
    if not hit.any():
        return colors
    oh, dh = o[hit], d[hit]
    depths, delta = sample_depths(t0[hit], t1[hit], opts.samples_per_ray,
                                  rng=rng, stratified=opts.stratified)
    pts = oh[:, None, :] + depths[:, :, None] * dh[:, None, :]
    flat = pts.reshape(-1, 3)
    # samples sit on the box boundary up to roundoff; nudge them inside
    np.clip(flat, model.bbox[0], model.bbox[1], out=flat)
    dirs_flat = np.repeat(dh, opts.samples_per_ray, axis=0)
    sigma, rgb = _shade(model, flat, dirs_flat, opts.depth,
                        opts.field_override)
    sigma = sigma.reshape(depths.shape)
    rgb = rgb.reshape(depths.shape + (3,))
    color, _, _ = composite(sigma, rgb, delta, bg)
    colors[hit] = color
    return colors


def render_image(model, camera, opts=None):
    """Render a full image as an (H, W, 3) float64 array in linear color.

    Deterministic for a fixed seed: the per-chunk jitter stream depends only
    on ``opts.seed`` and ``opts.chunk_rays``.
    """
    opts = opts if opts is not None else RenderOpts()
    origins, dirs = make_rays(camera)
    rng = np.random.default_rng(opts.seed) if opts.stratified else None
    total = len(origins)
    out = np.empty((total, 3))
    for lo in range(0, total, opts.chunk_rays):
        sl = slice(lo, min(lo + opts.chunk_rays, total))
        out[sl] = render_rays(model, origins[sl], dirs[sl], opts, rng=rng)
    return out.reshape(camera.height, camera.width, 3)
