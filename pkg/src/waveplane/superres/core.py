"""Super-resolution training: a low-resolution reconstruction phase
followed by a phase that also matches refined high-resolution targets.

Every step fits the model to one randomly chosen low-resolution frame,
rendering at the reduced pyramid depth. From ``lr_steps`` on, the same
frame is also rendered at full depth and 4x the image resolution and
pulled toward a refined target produced by a ``Refiner``. Targets are
cached per frame and the cache is dropped at fixed refresh intervals, so
each frame is refined at most once per window; the corruption level
handed to the refiner shrinks linearly over the HR phase.
"""
import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import optim
from ..field import init_mlp
from ..renderer import Camera, make_rays
from ..trainer import backprop_batch, render_batch
from ..triplane import init_model
from .perceptual import perceptual_loss_with_grad


@dataclass
class SrConfig:
    """Knobs of the super-resolution schedule.

    ``lr_depth``/``depth`` are the pyramid depths used for the
    low-resolution and full renders; ``lr_size``/``hr_size`` the image
    sides (the factor is fixed at 4x, like ``native_lr``/``native_hr``,
    the refiner-facing canvas sides). ``lr_steps`` is the first step of
    the HR phase and ``refresh_every`` the cache window length.
    """
    lr_depth: int = 2
    depth: int = 4
    lr_size: int = 128
    hr_size: int = 512
    lr_steps: int = 6000
    total_steps: int = 16000
    refresh_every: int = 500
    t_min: float = 0.02
    t_max_start: float = 0.98
    t_max_final: float = 0.25
    perceptual_weight: float = 0.1
    guidance_scale: float = 7.5
    perceptual_ref: str = "refined_hr"
    perceptual_backend: str = "default"
    native_lr: int = 128
    native_hr: int = 512

    def __post_init__(self):
        if not 0 <= self.lr_depth < self.depth:
            raise ValueError(f"LR render depth {self.lr_depth} must sit "
                             f"strictly below the full depth {self.depth}")
        if self.hr_size != 4 * self.lr_size:
            raise ValueError(f"hr_size {self.hr_size} must be 4x lr_size "
                             f"{self.lr_size}")
        if self.native_hr != 4 * self.native_lr:
            raise ValueError(f"native_hr {self.native_hr} must be 4x "
                             f"native_lr {self.native_lr}")
        hi = max(self.t_max_start, self.t_max_final)
        lo = min(self.t_max_start, self.t_max_final)
        if not 0.0 <= self.t_min < lo or hi > 1.0:
            raise ValueError(f"need 0 <= t_min < t_max <= 1, got t_min "
                             f"{self.t_min}, t_max {self.t_max_start}"
                             f"..{self.t_max_final}")
        if not 0 <= self.lr_steps <= self.total_steps:
            raise ValueError(f"lr_steps {self.lr_steps} outside "
                             f"[0, {self.total_steps}]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be at least 1")
        if self.perceptual_ref not in ("refined_hr", "upsampled_lr"):
            raise ValueError(f"perceptual_ref {self.perceptual_ref!r} not "
                             "one of 'refined_hr', 'upsampled_lr'")
        if self.perceptual_weight < 0 or self.guidance_scale < 0:
            raise ValueError("perceptual_weight and guidance_scale must "
                             "be nonnegative")


@dataclass(frozen=True)
class Placement:
    """How one frame was fitted to the refiner's native canvas.

    Boxes are (y0, x0, h, w) in full-frame coordinates; canvases are the
    (h, w) sides of the arrays the refiner sees. ``pad`` places the frame
    at the canvas origin with zero fill, ``crop`` cuts aligned random
    windows, ``identity`` passes frames through unchanged.
    """
    mode: str
    lr_box: tuple
    hr_box: tuple
    lr_canvas: tuple
    hr_canvas: tuple


@dataclass(frozen=True)
class SrTarget:
    """One cached refined target: the image covering ``hr_box`` of its
    frame and the corruption level it was refined at."""
    image: np.ndarray
    placement: Placement
    t: float
    perceptual_ref: np.ndarray = None


class HrSet:
    """Per-window cache of refined HR targets, keyed by frame index.

    Entries are write-once within a window; ``start_window`` drops them
    all, which is the only mutation allowed between refreshes.
    """

    def __init__(self):
        self._entries = {}
        self.window_start = None

    def start_window(self, step):
        self._entries.clear()
        self.window_start = step

    def get(self, frame_id):
        return self._entries.get(frame_id)

    def put(self, frame_id, target):
        if frame_id in self._entries:
            raise RuntimeError(f"frame {frame_id} already refined in the "
                               f"window starting at {self.window_start}")
        self._entries[frame_id] = target

    def __len__(self):
        return len(self._entries)

    def __contains__(self, frame_id):
        return frame_id in self._entries


def tmax_schedule(step, config):
    """Upper corruption bound at ``step``: linear from ``t_max_start`` at
    the first HR step to ``t_max_final`` at the last, never below
    ``t_min``."""
    if not config.lr_steps <= step <= config.total_steps:
        raise ValueError(f"step {step} outside the HR phase "
                         f"[{config.lr_steps}, {config.total_steps}]")
    span = config.total_steps - config.lr_steps
    u = 0.0 if span == 0 else (step - config.lr_steps) / span
    # convex combination: exact at both endpoints
    val = (1.0 - u) * config.t_max_start + u * config.t_max_final
    return max(float(val), config.t_min)


def _plan_placement(lr_shape, native_lr, native_hr, rng):
    """Choose the pad/crop geometry for one frame without touching pixel
    data; random crop offsets come from ``rng``."""
    h, w = int(lr_shape[0]), int(lr_shape[1])
    if native_hr != 4 * native_lr:
        raise ValueError(f"native sides {native_lr}/{native_hr} are not "
                         "a 4x pair")
    if h == native_lr and w == native_lr:
        return Placement("identity", (0, 0, h, w), (0, 0, 4 * h, 4 * w),
                         (h, w), (4 * h, 4 * w))
    if h <= native_lr and w <= native_lr:
        return Placement("pad", (0, 0, h, w), (0, 0, 4 * h, 4 * w),
                         (native_lr, native_lr), (native_hr, native_hr))
    if h >= native_lr and w >= native_lr:
        if rng is None:
            raise ValueError("an rng is required to draw random crops")
        y0 = int(rng.integers(0, h - native_lr + 1))
        x0 = int(rng.integers(0, w - native_lr + 1))
        return Placement("crop", (y0, x0, native_lr, native_lr),
                         (4 * y0, 4 * x0, native_hr, native_hr),
                         (native_lr, native_lr), (native_hr, native_hr))
    raise ValueError(f"frame side {h}x{w} cannot be padded and cropped "
                     f"at once to reach {native_lr}")


def _lr_canvas(lr_img, placement):
    y0, x0, h, w = placement.lr_box
    if placement.mode == "pad":
        canvas = np.zeros(placement.lr_canvas + lr_img.shape[2:])
        canvas[:h, :w] = lr_img
        return canvas
    return np.ascontiguousarray(lr_img[y0:y0 + h, x0:x0 + w])


def _hr_canvas(hr_content, placement):
    """Refiner-facing HR array from the rendered ``hr_box`` content."""
    if placement.mode == "pad":
        canvas = np.zeros(placement.hr_canvas + hr_content.shape[2:])
        canvas[:hr_content.shape[0], :hr_content.shape[1]] = hr_content
        return canvas
    return hr_content


def _hr_content(canvas, placement):
    """Inverse of ``_hr_canvas``: the slice covering ``hr_box``."""
    if placement.mode == "pad":
        _, _, h, w = placement.hr_box
        return canvas[:h, :w]
    return canvas


def pad_or_crop_pair(x_lr, x_hr, rng=None, native_lr=128, native_hr=512):
    """Fit an aligned LR/HR image pair to the refiner's native canvas.

    Frames at the native side pass through; smaller frames are zero
    padded at the origin; larger frames get a random ``native_lr`` crop
    with the HR window at exactly 4x the LR offsets and side. Returns
    (lr_out, hr_out, Placement); the placement is what maps a refined
    canvas back onto the frame.
    """
    lr = np.asarray(x_lr, dtype=np.float64)
    hr = np.asarray(x_hr, dtype=np.float64)
    if lr.ndim != 3 or hr.ndim != 3 or lr.shape[2] != hr.shape[2]:
        raise ValueError(f"expected (h, w, c) pair, got {lr.shape} and "
                         f"{hr.shape}")
    if hr.shape[0] != 4 * lr.shape[0] or hr.shape[1] != 4 * lr.shape[1]:
        raise ValueError(f"HR frame {hr.shape[:2]} is not 4x the LR frame "
                         f"{lr.shape[:2]}")
    placement = _plan_placement(lr.shape, native_lr, native_hr, rng)
    y0, x0, h, w = placement.hr_box
    return (_lr_canvas(lr, placement),
            _hr_canvas(np.ascontiguousarray(hr[y0:y0 + h, x0:x0 + w]),
                       placement),
            placement)


def guided_denoise_direction(eps_uncond, eps_lr_cond, alpha):
    """Blend of denoising directions: the unconditional prediction pushed
    toward the low-resolution-conditioned one with strength ``alpha`` (0
    keeps the unconditional direction, 1 the conditioned one)."""
    u = np.asarray(eps_uncond, dtype=np.float64)
    c = np.asarray(eps_lr_cond, dtype=np.float64)
    if u.shape != c.shape:
        raise ValueError(f"direction shapes {u.shape} and {c.shape} "
                         "must match")
    alpha = float(alpha)
    # exact at the endpoints: 0 is the unconditional direction, 1 the
    # conditioned one
    if alpha == 0.0:
        return u.copy()
    if alpha == 1.0:
        return c.copy()
    return u + alpha * (c - u)


@dataclass
class SrResult:
    """Outcome of ``sr_train``: the trained model plus per-step metric
    rows (losses, learning rate, corruption bound, refinement activity)."""
    model: object
    metrics: list = field(default_factory=list)


def _hr_camera(cam):
    return Camera(width=cam.width * 4, height=cam.height * 4,
                  focal_px=cam.focal_px * 4.0, c2w=cam.c2w)


def _box_rays(camera, box):
    y0, x0, h, w = box
    v, u = np.mgrid[y0:y0 + h, x0:x0 + w]
    pixels = np.stack([v.ravel(), u.ravel()], axis=1)
    return make_rays(camera, pixels=pixels)


def _refine_with_retry(refiner, x_est, x_lr, t, frame_id, placement, step):
    err = None
    for _ in range(2):
        try:
            return refiner.refine(x_est, x_lr, t, frame_id=frame_id,
                                  region=placement)
        except Exception as e:  # noqa: BLE001 - any backend failure
            err = e
    warnings.warn(f"refiner failed twice for frame {frame_id} at step "
                  f"{step} ({err}); skipping its HR update this window")
    return None


def sr_train(sr_config, train_config, lr_dataset, refiner, out_dir=None,
             log=None):
    """Super-resolve a scene given only low-resolution views.

    Steps before ``lr_steps`` optimize exactly the low-resolution
    reconstruction objective at ``lr_depth`` (data MSE plus the detail
    sparsity term); afterwards each step adds an L1 plus weighted
    perceptual pull toward the refined HR target of the step's frame.
    Writes ``final.ckpt`` and ``metrics.csv`` under ``out_dir`` when
    given; a non-finite gradient saves ``abort.ckpt`` and re-raises.
    """
    from ..io_cli.checkpoint import save_checkpoint
    from ..io_cli.images import bicubic_upscale

    sr, tc = sr_config, train_config
    if sr.depth != tc.levels:
        raise ValueError(f"sr depth {sr.depth} must equal the model "
                         f"level count {tc.levels}")
    views = lr_dataset.views("train")
    if not views:
        raise ValueError("dataset has no training views")
    for img, cam in views:
        if img.shape[0] != sr.lr_size or img.shape[1] != sr.lr_size:
            raise ValueError(f"training view is {img.shape[0]}x"
                             f"{img.shape[1]}, config says {sr.lr_size}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(tc.seed)
    model = init_model(tc.n_ll, tc.levels, tc.channels, tc.filter,
                       lr_dataset.bbox, rng)
    model.mlp = init_mlp(model.feature_width, tc.mlp_width,
                         tc.mlp_depth_density, tc.mlp_depth_color, rng)
    params = dict(model.parameters())
    state = optim.init_adam(params)
    hr_set = HrSet()
    result = SrResult(model=model)
    bg = tc.background

    lr_rays = [make_rays(cam) for _, cam in views]
    lr_targets = [np.asarray(img, np.float64).reshape(-1, 3)
                  for img, _ in views]
    hr_cams = [_hr_camera(cam) for _, cam in views]
    ray_cache = {}

    for step in range(sr.total_steps):
        frame = int(rng.integers(len(views)))

        origins, dirs = lr_rays[frame]
        pred_lr, cache_lr = render_batch(model, origins, dirs,
                                         tc.samples_per_ray, rng, bg,
                                         depth=sr.lr_depth)
        report, d_lr = optim.reconstruction_loss(
            pred_lr, lr_targets[frame], model=model,
            reg_weight=tc.reg_weight, reg_scale=tc.reg_scale)
        grads = {name: np.zeros(p.shape) for name, p in model.parameters()}
        for k, g in backprop_batch(model, cache_lr, d_lr, bg).items():
            grads[k] += g

        row = {"step": step, "frame": frame, "loss_lr": report.data,
               "loss_hr": "", "loss_perc": "", "loss_reg": report.reg,
               "lr": "", "t_max": "", "t": "", "refined": 0,
               "cached_frames": len(hr_set)}

        if step >= sr.lr_steps:
            if (step - sr.lr_steps) % sr.refresh_every == 0:
                hr_set.start_window(step)
            t_max = tmax_schedule(step, sr)
            row["t_max"] = t_max
            entry = hr_set.get(frame)
            if entry is None:
                lr_img = np.asarray(views[frame][0], np.float64)
                placement = _plan_placement(lr_img.shape, sr.native_lr,
                                            sr.native_hr, rng)
                t = float(rng.uniform(sr.t_min, t_max))
                pred, cache = _render_box(model, sr, tc, rng,
                                          hr_cams[frame], ray_cache,
                                          frame, placement.hr_box)
                entry = _build_target(sr, refiner, pred, lr_img,
                                      placement, t, frame, step,
                                      bicubic_upscale)
                if entry is not None:
                    hr_set.put(frame, entry)
                    row["refined"] = 1
                    row["t"] = entry.t
            else:
                pred, cache = _render_box(model, sr, tc, rng,
                                          hr_cams[frame], ray_cache,
                                          frame, entry.placement.hr_box)
            if entry is not None:
                hr_loss, perc_loss, hr_grads = _hr_losses(
                    model, sr, pred, cache, entry, bg)
                row["loss_hr"] = hr_loss
                row["loss_perc"] = perc_loss
                for k, g in hr_grads.items():
                    grads[k] += g
            row["cached_frames"] = len(hr_set)

        if tc.reg_weight:
            for k, g in optim.l1_subgrad(
                    model, tc.reg_weight * tc.reg_scale).items():
                grads[k] += g

        lr = optim.lr_schedule(step, sr.total_steps, tc.lr0, tc.lr_decay)
        row["lr"] = lr
        try:
            optim.adam_step(params, grads, state, lr)
        except FloatingPointError:
            if out is not None:
                save_checkpoint(out / "abort.ckpt", model,
                                {"step": step, "status": "aborted"})
            raise
        model.invalidate_cache()
        result.metrics.append(row)
        if log is not None and (step + 1) % 100 == 0:
            log(f"step {step + 1}/{sr.total_steps} lr-loss "
                f"{report.data:.5f} cached {len(hr_set)}")

    if out is not None:
        save_checkpoint(out / "final.ckpt", model,
                        {"step": sr.total_steps, "mode": "superres"})
        write_sr_metrics_csv(out / "metrics.csv", result.metrics)
    return result


def _build_target(sr, refiner, pred, lr_img, placement, t, frame, step,
                  bicubic_upscale):
    """Ask the refiner for a target given the rendered HR estimate and
    build the cache entry (None when the refiner gives up)."""
    h, w = placement.hr_box[2], placement.hr_box[3]
    est_canvas = _hr_canvas(pred.reshape(h, w, 3), placement)
    lr_canvas = _lr_canvas(lr_img, placement)
    refined = _refine_with_retry(refiner, est_canvas, lr_canvas, t, frame,
                                 placement, step)
    if refined is None:
        return None
    refined = np.asarray(refined, np.float64)
    if refined.shape != est_canvas.shape:
        warnings.warn(f"refiner returned shape {refined.shape}, expected "
                      f"{est_canvas.shape}; skipping frame {frame}")
        return None
    target = np.ascontiguousarray(_hr_content(refined, placement))
    ref = None
    if sr.perceptual_weight > 0 and sr.perceptual_ref == "upsampled_lr":
        y0, x0, lh, lw = placement.lr_box
        ref = bicubic_upscale(lr_img[y0:y0 + lh, x0:x0 + lw], 4)
    return SrTarget(image=target, placement=placement, t=t,
                    perceptual_ref=ref)


def _render_box(model, sr, tc, rng, hr_cam, ray_cache, frame, box):
    # only full-frame ray grids are memoized; random crop boxes change
    # every window and would grow the cache without bound
    full = box == (0, 0, hr_cam.height, hr_cam.width)
    key = (frame, box)
    if full and key in ray_cache:
        origins, dirs = ray_cache[key]
    else:
        origins, dirs = _box_rays(hr_cam, box)
        if full:
            ray_cache[key] = (origins, dirs)
    return render_batch(model, origins, dirs, tc.samples_per_ray, rng,
                        tc.background, depth=sr.depth)


def _hr_losses(model, sr, pred_flat, cache, entry, bg):
    """L1 plus weighted perceptual loss of the current HR render against
    the cached target, with gradients for every touched parameter."""
    h, w = entry.placement.hr_box[2], entry.placement.hr_box[3]
    pred = pred_flat.reshape(h, w, 3)
    diff = pred - entry.image
    hr_loss = float(np.mean(np.abs(diff)))
    d_pred = np.sign(diff) / diff.size
    perc_loss = 0.0
    if sr.perceptual_weight > 0:
        ref = entry.perceptual_ref if entry.perceptual_ref is not None \
            else entry.image
        perc_loss, d_perc = perceptual_loss_with_grad(
            pred, ref, backend=sr.perceptual_backend)
        d_pred = d_pred + sr.perceptual_weight * d_perc
    grads = backprop_batch(model, cache, d_pred.reshape(-1, 3), bg)
    return hr_loss, perc_loss, grads


def write_sr_metrics_csv(path, rows):
    """Metrics log as CSV with the super-resolution column order."""
    cols = ("step", "frame", "loss_lr", "loss_hr", "loss_perc", "loss_reg",
            "lr", "t_max", "t", "refined", "cached_frames")
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
