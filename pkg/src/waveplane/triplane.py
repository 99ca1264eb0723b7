"""Scene model: three axis-aligned feature planes stored as wavelet
pyramids, with point-feature assembly.

A 3D point inside the scene bounding box is normalized to the unit cube,
projected onto the (x, y), (x, z) and (y, z) planes, each projection is
sampled bilinearly from the reconstructed feature plane, and the three
samples are concatenated in fixed XY|XZ|YZ order into one feature vector
of length 3 * channels.

Coefficients are stored float32; reconstruction and sampling compute in
float64. Reconstructed planes are cached per depth and the cache must be
invalidated (``invalidate_cache``) whenever a coefficient changes.
"""
from dataclasses import dataclass, field

import numpy as np

from ._kernels import active as _k
from .wavelet import WaveletPyramid, DetailBands, get_filter_bank, reconstruct

__all__ = [
    "WaveletTriplane", "PLANE_NAMES", "init_model", "reconstruct_planes",
    "sample_features", "sample_features_backward", "high_freq_l1",
]

PLANE_NAMES = ("xy", "xz", "yz")

# world-axis index pairs backing each plane, in concatenation order
_PROJECTIONS = ((0, 1), (0, 2), (1, 2))


@dataclass
class WaveletTriplane:
    """Three wavelet pyramids plus the scene bounding box.

    ``planes`` maps 'xy'/'xz'/'yz' to WaveletPyramid; all three share
    n_ll, depth, channel count and filter bank. ``mlp`` is attached by the
    field module and rides along for checkpointing.
    """
    planes: dict
    bbox: np.ndarray          # (2, 3): row 0 mins, row 1 maxs
    mlp: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(2, 3)
        if not np.all(self.bbox[1] > self.bbox[0]):
            raise ValueError("bbox maxs must exceed mins")
        ref = self.planes[PLANE_NAMES[0]]
        for name in PLANE_NAMES:
            pyr = self.planes[name]
            pyr.validate()
            same = (pyr.n_ll == ref.n_ll and pyr.depth == ref.depth
                    and pyr.channels == ref.channels
                    and pyr.filter.name == ref.filter.name)
            if not same:
                raise ValueError(f"plane {name} shape parameters diverge")

    @property
    def n_ll(self):
        return self.planes["xy"].n_ll

    @property
    def depth(self):
        return self.planes["xy"].depth

    @property
    def channels(self):
        return self.planes["xy"].channels

    @property
    def filter(self):
        return self.planes["xy"].filter

    @property
    def feature_width(self):
        return 3 * self.channels

    def invalidate_cache(self):
        self._cache.clear()

    def parameters(self):
        """(name, array) pairs over every trainable array, pyramids first
        (serialization order), then MLP layers when attached."""
        for pname in PLANE_NAMES:
            for path, arr in self.planes[pname].band_arrays():
                yield f"{pname}.{path}", arr
        if self.mlp is not None:
            yield from self.mlp.parameters()

    def copy(self):
        m = WaveletTriplane(
            planes={n: self.planes[n].copy() for n in PLANE_NAMES},
            bbox=self.bbox.copy(),
            mlp=self.mlp.copy() if self.mlp is not None else None,
        )
        return m


def init_model(n_ll, levels, channels, filter_bank, bbox, rng,
               ll_scale=1e-2, dtype=np.float32):
    """Fresh model: root lowpass bands i.i.d. uniform in [-ll_scale,
    ll_scale], every detail band zero."""
    bank = get_filter_bank(filter_bank)
    planes = {}
    for name in PLANE_NAMES:
        ll = rng.uniform(-ll_scale, ll_scale,
                         size=(n_ll, n_ll, channels)).astype(dtype)
        lvls = []
        for i in range(levels):
            side = n_ll * (2 ** i)
            shape = (side, side, channels)
            lvls.append(DetailBands(np.zeros(shape, dtype),
                                    np.zeros(shape, dtype),
                                    np.zeros(shape, dtype)))
        planes[name] = WaveletPyramid(ll=ll, levels=lvls, filter=bank)
    return WaveletTriplane(planes=planes, bbox=bbox)


def reconstruct_planes(model, depth=None):
    """The three feature planes synthesized from the first ``depth``
    pyramid levels (full depth by default); float64, cached per depth."""
    if depth is None:
        depth = model.depth
    if not 0 <= depth <= model.depth:
        raise ValueError(f"depth {depth} outside [0, {model.depth}]")
    cached = model._cache.get(depth)
    if cached is not None:
        return cached
    out = tuple(reconstruct(model.planes[name], depth) for name in PLANE_NAMES)
    model._cache[depth] = out
    return out


def _normalize_points(model, points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {pts.shape}")
    lo, hi = model.bbox
    unit = (pts - lo) / (hi - lo)
    if np.any(unit < 0.0) or np.any(unit > 1.0):
        bad = int(np.sum(np.any((unit < 0.0) | (unit > 1.0), axis=1)))
        raise ValueError(f"{bad} query points fall outside the scene bbox")
    return unit


def sample_features(model, points, depth=None):
    """Feature vectors (n, 3*channels) for world-space ``points``; points
    outside the bbox raise rather than clamp."""
    unit = _normalize_points(model, points)
    planes = reconstruct_planes(model, depth)
    side = planes[0].shape[0]
    parts = []
    for (a0, a1), plane in zip(_PROJECTIONS, planes):
        fx = unit[:, a0] * side - 0.5
        fy = unit[:, a1] * side - 0.5
        parts.append(_k.bilinear_gather(np.ascontiguousarray(plane), fx, fy))
    return np.concatenate(parts, axis=1)


def sample_features_backward(model, points, grad_features, depth=None):
    """Adjoint of ``sample_features``: scatter a (n, 3*channels) upstream
    gradient back onto the three reconstructed planes. Returns a tuple of
    plane-shaped gradients in XY|XZ|YZ order."""
    unit = _normalize_points(model, points)
    planes = reconstruct_planes(model, depth)
    side = planes[0].shape[0]
    c = model.channels
    grad = np.ascontiguousarray(np.asarray(grad_features, dtype=np.float64))
    if grad.shape != (unit.shape[0], 3 * c):
        raise ValueError(f"gradient shape {grad.shape} does not match "
                         f"({unit.shape[0]}, {3 * c})")
    out = []
    for j, (a0, a1) in enumerate(_PROJECTIONS):
        fx = unit[:, a0] * side - 0.5
        fy = unit[:, a1] * side - 0.5
        piece = np.ascontiguousarray(grad[:, j * c:(j + 1) * c])
        out.append(_k.bilinear_scatter(piece, fx, fy, side, side))
    return tuple(out)


def high_freq_l1(model):
    """Sum of absolute detail coefficients over all levels of all three
    pyramids; the root lowpass bands are excluded."""
    total = 0.0
    for name in PLANE_NAMES:
        for bands in model.planes[name].levels:
            for band in bands:
                total += float(np.abs(np.asarray(band, np.float64)).sum())
    return total
