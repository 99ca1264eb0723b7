"""Multiview datasets: manifest-driven loading compatible with the common
``transforms.json`` layout, export, and a deterministic analytic scene used
for desk-scale training and as the super-resolution ground truth."""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..renderer import Camera, make_rays
from . import images

DEFAULT_HALF_EXTENT = 1.5
_SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    """Linear float images with their cameras, grouped by split tag."""
    images: dict
    cameras: dict
    bbox: np.ndarray

    def view_count(self, split):
        return len(self.images.get(split, ()))

    def views(self, split):
        """(image, camera) pairs of a split; missing split is an error."""
        if split not in self.images or not self.images[split]:
            raise ValueError(f"dataset has no '{split}' split")
        return list(zip(self.images[split], self.cameras[split]))


@dataclass
class SceneManifest:
    """Per-frame file paths and poses plus shared intrinsics, by split."""
    root: Path
    fov_x: dict    # split -> horizontal field of view (radians)
    frames: dict   # split -> list of (file path, 4x4 camera-to-world)


def _read_transforms(path):
    with open(path) as f:
        doc = json.load(f)
    if "camera_angle_x" not in doc or "frames" not in doc:
        raise ValueError(f"{path}: missing camera_angle_x or frames")
    fov = float(doc["camera_angle_x"])
    frames = []
    for fr in doc["frames"]:
        mat = np.asarray(fr.get("transform_matrix"), dtype=np.float64)
        if mat.shape != (4, 4) or not np.all(np.isfinite(mat)):
            raise ValueError(f"{path}: malformed transform_matrix "
                             f"for frame {fr.get('file_path')}")
        frames.append((fr["file_path"], mat))
    return fov, frames


def _resolve_image(root, rel):
    p = root / rel
    if p.exists():
        return p
    for ext in (".png", ".raw"):
        q = p.with_suffix(p.suffix + ext) if p.suffix else p.with_suffix(ext)
        if q.exists():
            return q
    raise ValueError(f"referenced image not found: {p}")


def load_manifest(path):
    """Parse a scene directory (or a single transforms JSON file)."""
    path = Path(path)
    if path.is_file():
        fov, frames = _read_transforms(path)
        return SceneManifest(root=path.parent, fov_x={"train": fov},
                             frames={"train": frames})
    fov_x = {}
    frames = {}
    for split in _SPLITS:
        p = path / f"transforms_{split}.json"
        if p.exists():
            fov_x[split], frames[split] = _read_transforms(p)
    if not frames:
        p = path / "transforms.json"
        if not p.exists():
            raise ValueError(f"no transforms JSON found under {path}")
        fov_x["train"], frames["train"] = _read_transforms(p)
    return SceneManifest(root=path, fov_x=fov_x, frames=frames)


def _load_image(path):
    if path.suffix == ".raw":
        return images.load_raw(path)
    return images.load_png(path)


def load_scene(path, half_extent=DEFAULT_HALF_EXTENT):
    """Decode a manifest into a Dataset of linear-color images.

    Raises a descriptive error for missing files, malformed matrices or
    non-orthonormal rotations.
    """
    manifest = load_manifest(path)
    imgs = {}
    cams = {}
    for split, frames in manifest.frames.items():
        imgs[split] = []
        cams[split] = []
        for rel, pose in frames:
            img_path = _resolve_image(manifest.root, rel)
            img = _load_image(img_path)
            cam = Camera.from_fov_x(img.shape[1], img.shape[0],
                                    manifest.fov_x[split], pose)
            try:
                cam.check_rotation()
            except ValueError as e:
                raise ValueError(f"{img_path}: {e}") from None
            imgs[split].append(img)
            cams[split].append(cam)
    bbox = np.array([[-half_extent] * 3, [half_extent] * 3])
    return Dataset(images=imgs, cameras=cams, bbox=bbox)


def save_scene(dataset, root, fmt="png"):
    """Export a Dataset as per-split transforms JSON plus image files.

    ``fmt='raw'`` keeps full float precision so a reload is bit-faithful;
    ``fmt='png'`` quantizes to 8-bit sRGB.
    """
    if fmt not in ("png", "raw"):
        raise ValueError(f"unknown format {fmt!r}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for split, imgs in dataset.images.items():
        if not imgs:
            continue
        (root / split).mkdir(exist_ok=True)
        frames = []
        cams = dataset.cameras[split]
        fov = 2.0 * math.atan(0.5 * cams[0].width / cams[0].focal_px)
        for i, (img, cam) in enumerate(zip(imgs, cams)):
            rel = f"{split}/r_{i}.{fmt}"
            if fmt == "png":
                images.save_png(root / rel, img)
            else:
                images.save_raw(root / rel, img)
            frames.append({"file_path": rel,
                           "transform_matrix": cam.c2w.tolist()})
        doc = {"camera_angle_x": fov, "frames": frames}
        with open(root / f"transforms_{split}.json", "w") as f:
            json.dump(doc, f, indent=1)


def ring_pose(azimuth, elevation, radius):
    """Camera-to-world for a camera on a view sphere looking at the origin."""
    pos = radius * np.array([
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
        math.cos(elevation) * math.cos(azimuth)])
    fwd = -pos / np.linalg.norm(pos)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = true_up
    c2w[:3, 2] = -fwd
    c2w[:3, 3] = pos
    return c2w


@dataclass
class SyntheticScene:
    """A shaded sphere rendered analytically: the ground-truth oracle for
    training and super-resolution tests.

    Images at resolution R come from a high-resolution raster box-averaged
    down, so ``box_downsample(image(4R), 4)`` equals ``image(R)`` exactly;
    R must divide ``master_res``.
    """
    resolution: int
    master_res: int
    fov_x: float
    cam_radius: float
    poses: dict = field(default_factory=dict)   # split -> list of 4x4
    center: np.ndarray = None
    radius: float = 0.5
    albedo_base: np.ndarray = None
    albedo_tint: np.ndarray = None
    light_dir: np.ndarray = None
    ambient: float = 0.25
    background: tuple = (1.0, 1.0, 1.0)
    bbox: np.ndarray = None

    def camera(self, split, i, resolution=None):
        res = resolution or self.resolution
        return Camera.from_fov_x(res, res, self.fov_x, self.poses[split][i])

    def shade(self, origins, dirs):
        """Exact ray-sphere radiance for unit-direction rays."""
        oc = origins - self.center
        b = np.einsum("nk,nk->n", oc, dirs)
        disc = b * b - (np.einsum("nk,nk->n", oc, oc) - self.radius ** 2)
        hit = disc > 0.0
        t = -b[hit] - np.sqrt(disc[hit])
        hit[hit] &= t > 0.0
        t = t[t > 0.0]
        out = np.tile(np.asarray(self.background, np.float64),
                      (len(origins), 1))
        p = origins[hit] + t[:, None] * dirs[hit]
        n = (p - self.center) / self.radius
        albedo = np.clip(self.albedo_base + n * self.albedo_tint, 0.0, 1.0)
        lam = np.maximum(n @ self.light_dir, 0.0)
        out[hit] = albedo * (self.ambient + (1.0 - self.ambient) * lam)[:, None]
        return out

    def render_from(self, camera):
        """Analytic image (one ray per pixel center, no supersampling)."""
        origins, dirs = make_rays(camera)
        return self.shade(origins, dirs).reshape(camera.height,
                                                 camera.width, 3)

    def image(self, split, i, resolution=None):
        """Anti-aliased oracle image at any resolution dividing master_res."""
        res = resolution or self.resolution
        if self.master_res % res:
            raise ValueError(f"resolution {res} does not divide "
                             f"master {self.master_res}")
        master = self.render_from(self.camera(split, i, self.master_res))
        return images.box_downsample(master, self.master_res // res)

    def dataset(self, resolution=None):
        imgs = {}
        cams = {}
        for split, poses in self.poses.items():
            imgs[split] = [self.image(split, i, resolution)
                           for i in range(len(poses))]
            cams[split] = [self.camera(split, i, resolution)
                           for i in range(len(poses))]
        return Dataset(images=imgs, cameras=cams, bbox=self.bbox.copy())


def make_synthetic(resolution=64, n_train=20, n_val=3, n_test=3, seed=0,
                   master_scale=8, fov_x=0.7, cam_radius=3.0):
    """Deterministic shaded-sphere scene with ring cameras.

    Returns a SyntheticScene; call ``.dataset()`` for the rendered views
    or ``.image(split, i, resolution)`` for oracle frames at other scales.
    """
    if n_train < 1:
        raise ValueError("need at least one training view")
    rng = np.random.default_rng(seed)
    scene = SyntheticScene(
        resolution=resolution,
        master_res=resolution * master_scale,
        fov_x=fov_x,
        cam_radius=cam_radius,
        center=np.zeros(3),
        radius=0.5,
        albedo_base=rng.uniform(0.35, 0.65, 3),
        albedo_tint=rng.uniform(-0.3, 0.3, 3),
        light_dir=np.array([0.35, 0.8, 0.49]) / np.linalg.norm(
            [0.35, 0.8, 0.49]),
        bbox=np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]),
    )
    counts = {"train": n_train, "val": n_val, "test": n_test}
    offset = 0.0
    for split, n in counts.items():
        poses = []
        for k in range(n):
            az = 2.0 * math.pi * (k / max(n, 1)) + offset \
                + rng.uniform(-0.05, 0.05)
            el = math.radians(25.0) + rng.uniform(-0.15, 0.15)
            poses.append(ring_pose(az, el, cam_radius))
        scene.poses[split] = poses
        offset += 0.61  # stagger splits around the ring
    return scene
