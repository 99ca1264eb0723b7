"""End-to-end reconstruction training: ray batches, rendering at the
current coarse-to-fine depth, gradients chained back through compositing,
the field MLP, plane sampling and the wavelet synthesis, Adam updates,
metrics and checkpoints."""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import optim
from .field import encode_direction, field_backward, field_eval, init_mlp
from .renderer import (RenderOpts, composite, composite_backward, make_rays,
                       ray_bbox_span, render_image, sample_depths)
from .triplane import init_model, sample_features, sample_features_backward
from .wavelet import append_level, reconstruct_adjoint


@dataclass
class TrainConfig:
    """Hyperparameters of one reconstruction run.

    ``base_side``/``final_side`` are the plane resolutions at the start and
    end of coarse-to-fine growth; ``c2f_schedule`` lists (step, depth) pairs
    with nondecreasing depths ending at ``levels`` (derived from equal step
    splits when omitted).
    """
    n_ll: int = 16
    levels: int = 3
    base_side: int = 32
    final_side: int = 128
    channels: int = 8
    reg_weight: float = 0.4
    mlp_width: int = 32
    mlp_depth_density: int = 1
    mlp_depth_color: int = 2
    total_steps: int = 2000
    rays_per_batch: int = 512
    samples_per_ray: int = 32
    filter: str = "bior6.8"
    seed: int = 0
    c2f_schedule: tuple = None
    lr0: float = 0.01
    lr_decay: float = 0.1
    reg_scale: float = 1.0
    val_every: int = 500
    val_views: int = 2
    background: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.n_ll * 2 ** self.levels != self.final_side:
            raise ValueError(
                f"final_side {self.final_side} must be "
                f"n_ll * 2^levels = {self.n_ll * 2 ** self.levels}")
        d = math.log2(self.base_side / self.n_ll)
        if d != int(d) or not 0 <= d <= self.levels:
            raise ValueError(
                f"base_side {self.base_side} must be n_ll * 2^d "
                f"with 0 <= d <= levels")
        if self.c2f_schedule is None:
            self.c2f_schedule = default_c2f_schedule(
                int(d), self.levels, self.total_steps)
        sched = tuple((int(s), int(dep)) for s, dep in self.c2f_schedule)
        depths = [dep for _, dep in sched]
        if depths != sorted(depths) or (sched and depths[-1] != self.levels):
            raise ValueError("c2f depths must be nondecreasing and end "
                             "at the full level count")
        self.c2f_schedule = sched

    @property
    def base_depth(self):
        return int(math.log2(self.base_side / self.n_ll))


def default_c2f_schedule(base_depth, levels, total_steps):
    """Equal step splits: one depth increment per segment, starting at
    ``base_depth`` and reaching ``levels`` for the final segment."""
    extra = levels - base_depth
    if extra <= 0:
        return ()
    seg = total_steps / (extra + 1)
    return tuple((int(round(seg * (i + 1))), base_depth + i + 1)
                 for i in range(extra))


def config_from_preset(name, **overrides):
    """TrainConfig from a named preset; keyword overrides win."""
    from .io_cli.presets import get_preset
    p = get_preset(name)
    p.pop("param_count")
    p.update(overrides)
    return TrainConfig(**p)


def psnr(a, b, peak=1.0):
    """10*log10(peak^2 / MSE); returns inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shapes disagree: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)


def wavelet_adjoint(model, plane_grads):
    """Chain an upstream gradient on the three reconstructed planes back to
    every wavelet coefficient; returns {parameter name: gradient}."""
    grads = {}
    for name, g in zip(("xy", "xz", "yz"), plane_grads):
        pyr = model.planes[name]
        full = pyr.n_ll * 2 ** pyr.depth
        if (g.ndim != 3 or g.shape[0] != g.shape[1]
                or g.shape[2] != pyr.channels or g.shape[0] > full):
            raise ValueError(f"plane gradient shape {g.shape} does not "
                             f"match {name} (side at most {full}, "
                             f"channels {pyr.channels})")
        gp = reconstruct_adjoint(g, pyr.n_ll, pyr.filter)
        for path, arr in gp.band_arrays():
            grads[f"{name}.{path}"] = arr
    return grads


@dataclass
class TrainResult:
    """Outcome of ``train``: final model, per-step metric rows, and the
    best validation snapshot."""
    model: object
    metrics: list
    best_val_psnr: float = float("-inf")
    best_val_step: int = -1


class _RayBank:
    """All training pixels flattened for uniform with-replacement sampling."""

    def __init__(self, dataset):
        views = dataset.views("train")
        self.origins = []
        self.dirs = []
        self.colors = []
        for img, cam in views:
            o, d = make_rays(cam)
            self.origins.append(o)
            self.dirs.append(d)
            self.colors.append(np.asarray(img, np.float64).reshape(-1, 3))
        self.origins = np.concatenate(self.origins)
        self.dirs = np.concatenate(self.dirs)
        self.colors = np.concatenate(self.colors)

    def batch(self, rng, n):
        idx = rng.integers(0, len(self.origins), size=n)
        return self.origins[idx], self.dirs[idx], self.colors[idx]


@dataclass
class BatchCache:
    """Intermediates from ``render_batch`` needed by ``backprop_batch``."""
    hit: np.ndarray
    points: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    rgb: np.ndarray
    weights: np.ndarray
    t_res: np.ndarray
    field_cache: object
    depth: int = None


def render_batch(model, origins, dirs, samples_per_ray, rng, background,
                 depth=None, stratified=True):
    """Render a ray batch keeping every intermediate for the backward pass.

    Returns (pred (n, 3), BatchCache or None); rays missing the scene bbox
    get the background color and no cache entry.
    """
    n = len(origins)
    bg = np.asarray(background, np.float64)
    pred = np.tile(bg, (n, 1))
    t0, t1, hit = ray_bbox_span(origins, dirs, model.bbox)
    if not hit.any():
        return pred, None
    oh = origins[hit]
    dh = dirs[hit]
    depths, delta = sample_depths(t0[hit], t1[hit], samples_per_ray,
                                  rng=rng, stratified=stratified)
    pts = oh[:, None, :] + depths[:, :, None] * dh[:, None, :]
    flat = pts.reshape(-1, 3)
    np.clip(flat, model.bbox[0], model.bbox[1], out=flat)
    dirs_flat = np.repeat(dh, samples_per_ray, axis=0)
    feats = sample_features(model, flat, depth=depth)
    enc = encode_direction(dirs_flat, model.mlp.dir_bands)
    sigma_f, rgb_f, fcache = field_eval(feats, enc, model.mlp, retain=True)
    sigma = sigma_f.reshape(depths.shape)
    rgb = rgb_f.reshape(depths.shape + (3,))
    color, weights, t_res = composite(sigma, rgb, delta, bg)
    pred[hit] = color
    return pred, BatchCache(hit=hit, points=flat, delta=delta, sigma=sigma,
                            rgb=rgb, weights=weights, t_res=t_res,
                            field_cache=fcache, depth=depth)


def backprop_batch(model, cache, d_pred, background):
    """Chain an upstream per-ray color gradient back to every model
    parameter touched by ``render_batch``; returns {name: gradient}."""
    if cache is None:
        return {}
    bg = np.asarray(background, np.float64)
    d_sigma, d_rgb = composite_backward(d_pred[cache.hit], cache.sigma,
                                        cache.rgb, cache.delta, bg,
                                        cache.weights, cache.t_res)
    d_feats, mlp_grads = field_backward(
        cache.field_cache, model.mlp, d_sigma.ravel(), d_rgb.reshape(-1, 3))
    plane_grads = sample_features_backward(model, cache.points, d_feats,
                                           depth=cache.depth)
    grads = wavelet_adjoint(model, plane_grads)
    grads.update(mlp_grads)
    return grads


def _forward_backward(model, origins, dirs, targets, config, rng):
    """One loss evaluation plus full gradient dict over model parameters."""
    pred, cache = render_batch(model, origins, dirs,
                               config.samples_per_ray, rng,
                               config.background)
    report, d_pred = optim.reconstruction_loss(
        pred, targets, model=model, reg_weight=config.reg_weight,
        reg_scale=config.reg_scale)
    grads = {name: np.zeros(p.shape) for name, p in model.parameters()}
    grads.update(backprop_batch(model, cache, d_pred, config.background))
    if config.reg_weight:
        for k, g in optim.l1_subgrad(
                model, config.reg_weight * config.reg_scale).items():
            grads[k] += g
    return report, grads


def _grow_model(model, target_depth):
    """Append zeroed detail levels until the pyramids reach target_depth."""
    while model.depth < target_depth:
        for name in ("xy", "xz", "yz"):
            model.planes[name] = append_level(model.planes[name])
        model.invalidate_cache()
    return model


def _val_psnr(model, dataset, config, n_views):
    views = dataset.views("val") if "val" in dataset.images \
        and dataset.images["val"] else dataset.views("train")
    opts = RenderOpts(samples_per_ray=config.samples_per_ray,
                      background=config.background)
    vals = []
    for img, cam in views[:n_views]:
        rendered = render_image(model, cam, opts)
        vals.append(psnr(rendered, img))
    finite = [v for v in vals if math.isfinite(v)]
    return float(np.mean(finite)) if finite else float("inf")


def train(config, dataset, out_dir=None, log=None):
    """Optimize a fresh model on the dataset's training views.

    Writes ``metrics.csv``, ``best.ckpt`` and ``final.ckpt`` under
    ``out_dir`` when given; on a non-finite gradient the current state is
    saved as ``abort.ckpt`` and the error re-raised.
    """
    from .io_cli.checkpoint import save_checkpoint

    if dataset.view_count("train") == 0:
        raise ValueError("dataset has no training views")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    model = init_model(config.n_ll, config.base_depth, config.channels,
                       config.filter, dataset.bbox, rng)
    model.mlp = init_mlp(model.feature_width, config.mlp_width,
                         config.mlp_depth_density, config.mlp_depth_color,
                         rng)
    bank = _RayBank(dataset)
    params = dict(model.parameters())
    state = optim.init_adam(params)
    boundaries = dict(config.c2f_schedule)
    result = TrainResult(model=model, metrics=[])

    for step in range(config.total_steps):
        if step in boundaries:
            _grow_model(model, boundaries[step])
            params = dict(model.parameters())
        origins, dirs, targets = bank.batch(rng, config.rays_per_batch)
        report, grads = _forward_backward(model, origins, dirs, targets,
                                          config, rng)
        lr = optim.lr_schedule(step, config.total_steps, config.lr0,
                               config.lr_decay)
        try:
            optim.adam_step(params, grads, state, lr)
        except FloatingPointError:
            if out is not None:
                save_checkpoint(out / "abort.ckpt", model,
                                {"step": step, "status": "aborted"})
            raise
        model.invalidate_cache()

        row = {"step": step, "loss_data": report.data,
               "loss_reg": report.reg, "lr": lr, "depth": model.depth,
               "val_psnr": ""}
        last = step == config.total_steps - 1
        if step % config.val_every == config.val_every - 1 or last:
            val = _val_psnr(model, dataset, config, config.val_views)
            row["val_psnr"] = val
            if log is not None:
                log(f"step {step + 1}/{config.total_steps} "
                    f"loss {report.total:.5f} val psnr {val:.2f} dB")
            if val > result.best_val_psnr:
                result.best_val_psnr = val
                result.best_val_step = step
                if out is not None:
                    save_checkpoint(out / "best.ckpt", model,
                                    {"step": step, "val_psnr": val})
        result.metrics.append(row)

    if out is not None:
        save_checkpoint(out / "final.ckpt", model,
                        {"step": config.total_steps,
                         "val_psnr": result.best_val_psnr})
        write_metrics_csv(out / "metrics.csv", result.metrics)
    return result


def write_metrics_csv(path, rows):
    """Metrics log as CSV with the documented column order."""
    cols = ("step", "loss_data", "loss_reg", "lr", "depth", "val_psnr")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
