"""Point appearance: maps triplane features plus an encoded view direction
to (density, color) through two small bias-free ReLU MLPs.

The density branch reads the feature vector and emits a density logit plus
a geometry feature vector; density is exp of the logit (clamped above at
15 so early training cannot overflow). The color branch reads the geometry
features concatenated with the frequency-encoded direction and emits RGB
through a sigmoid. Weights are stored float32; evaluation upcasts to
float64. The backward pass is written by hand against retained forward
activations.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MlpWeights", "FieldCache", "init_mlp", "encode_direction",
    "direction_encoding_width", "field_eval", "field_backward",
    "DENSITY_LOGIT_CLAMP",
]

DENSITY_LOGIT_CLAMP = 15.0


@dataclass
class MlpWeights:
    """Layer matrices of the two branches (no biases).

    density: [(features, W), (W, W) * (depth-1), (W, 1 + geo)]
    color:   [(geo + dir_width, W), (W, W) * (depth-1), (W, 3)]
    """
    density: list
    color: list
    geo_features: int = 15
    dir_bands: int = 4

    def parameters(self):
        for i, arr in enumerate(self.density):
            yield f"mlp.density.{i}", arr
        for i, arr in enumerate(self.color):
            yield f"mlp.color.{i}", arr

    def copy(self):
        return MlpWeights(density=[w.copy() for w in self.density],
                          color=[w.copy() for w in self.color],
                          geo_features=self.geo_features,
                          dir_bands=self.dir_bands)

    def validate(self):
        for arr in self.density + self.color:
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite MLP weight")
        if self.density[-1].shape[1] != 1 + self.geo_features:
            raise ValueError("density head width must be 1 + geo_features")
        if self.color[-1].shape[1] != 3:
            raise ValueError("color head must emit 3 channels")
        return self


def direction_encoding_width(bands):
    return 3 + 6 * bands


def init_mlp(feature_width, width, depth_density, depth_color, rng,
             geo_features=15, dir_bands=4, dtype=np.float32):
    """Kaiming-style uniform init, bound sqrt(6 / fan_in) per layer."""
    def layer(n_in, n_out):
        bound = np.sqrt(6.0 / n_in)
        return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)

    def stack(n_in, hidden, n_hidden, n_out):
        dims = [n_in] + [hidden] * n_hidden + [n_out]
        return [layer(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    density = stack(feature_width, width, depth_density, 1 + geo_features)
    color = stack(geo_features + direction_encoding_width(dir_bands),
                  width, depth_color, 3)
    return MlpWeights(density=density, color=color,
                      geo_features=geo_features, dir_bands=dir_bands)


def encode_direction(dirs, bands):
    """Frequency encoding of unit directions (n, 3) with ``bands`` octaves:
    [d, sin(2^0 pi d), cos(2^0 pi d), ..., sin(2^{bands-1} pi d),
    cos(2^{bands-1} pi d)], each block componentwise over the 3 axes."""
    d = np.asarray(dirs, dtype=np.float64)
    if d.ndim == 1:
        d = d[None, :]
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = float(np.abs(norms - 1.0).max())
        raise ValueError(f"directions must be unit length (off by {worst:.2e})")
    parts = [d]
    for k in range(bands):
        ang = (2.0 ** k) * np.pi * d
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    return np.concatenate(parts, axis=1)


@dataclass
class FieldCache:
    """Forward activations retained for the hand-written backward pass."""
    features: np.ndarray
    density_pre: list      # pre-activation z of each density layer
    density_post: list     # inputs fed to each density layer
    logit: np.ndarray
    sigma: np.ndarray
    color_pre: list
    color_post: list
    rgb: np.ndarray


def _forward_stack(x, layers):
    """ReLU MLP without output activation; returns output, pre-acts and
    the input seen by every layer."""
    pres = []
    posts = []
    h = x
    for i, w in enumerate(layers):
        posts.append(h)
        z = h @ w
        pres.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, pres, posts


def field_eval(features, dir_enc, weights, retain=False):
    """Densities (n,) and colors (n, 3) for a batch of feature vectors and
    encoded directions.

    Returns ``(sigma, rgb, cache)``. The cache holds the intermediates
    ``field_backward`` needs and is None unless ``retain=True``."""
    x = np.asarray(features, dtype=np.float64)
    e = np.asarray(dir_enc, dtype=np.float64)
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(e)):
        raise ValueError("non-finite field inputs")
    dens = [np.asarray(w, np.float64) for w in weights.density]
    cols = [np.asarray(w, np.float64) for w in weights.color]

    out, d_pre, d_post = _forward_stack(x, dens)
    logit = out[:, 0]
    geo = out[:, 1:]
    sigma = np.exp(np.minimum(logit, DENSITY_LOGIT_CLAMP))

    cin = np.concatenate([geo, e], axis=1)
    cout, c_pre, c_post = _forward_stack(cin, cols)
    # overflow-free sigmoid: 0.5 * (1 + tanh(x / 2))
    rgb = 0.5 * (1.0 + np.tanh(0.5 * cout))

    if not retain:
        return sigma, rgb, None
    cache = FieldCache(features=x, density_pre=d_pre, density_post=d_post,
                       logit=logit, sigma=sigma, color_pre=c_pre,
                       color_post=c_post, rgb=rgb)
    return sigma, rgb, cache


def _backward_stack(d_out, layers, pres, posts):
    grads = [None] * len(layers)
    g = d_out
    for i in range(len(layers) - 1, -1, -1):
        if i < len(layers) - 1:
            g = g * (pres[i] > 0.0)
        grads[i] = posts[i].T @ g
        g = g @ layers[i].T
    return g, grads


def field_backward(cache, weights, d_sigma, d_rgb):
    """Gradients w.r.t. features and every MLP layer given upstream
    gradients on (sigma, rgb). Returns (d_features, {param name: grad})."""
    if cache is None:
        raise ValueError("field_backward needs the cache retained by "
                         "field_eval(..., retain=True)")
    dens = [np.asarray(w, np.float64) for w in weights.density]
    cols = [np.asarray(w, np.float64) for w in weights.color]
    d_sigma = np.asarray(d_sigma, dtype=np.float64)
    d_rgb = np.asarray(d_rgb, dtype=np.float64)

    # color head: rgb = sigmoid(z)
    dz_col = d_rgb * cache.rgb * (1.0 - cache.rgb)
    d_cin, col_grads = _backward_stack(dz_col, cols, cache.color_pre,
                                       cache.color_post)
    geo_width = weights.geo_features
    d_geo = d_cin[:, :geo_width]

    # density head: sigma = exp(min(logit, clamp))
    d_logit = d_sigma * cache.sigma * (cache.logit < DENSITY_LOGIT_CLAMP)
    d_out = np.concatenate([d_logit[:, None], d_geo], axis=1)
    d_features, dens_grads = _backward_stack(d_out, dens, cache.density_pre,
                                             cache.density_post)

    grads = {}
    for i, g in enumerate(dens_grads):
        grads[f"mlp.density.{i}"] = g
    for i, g in enumerate(col_grads):
        grads[f"mlp.color.{i}"] = g
    return d_features, grads
