"""Deterministic paired photo/sketch benchmark built from parametric shape classes.

Every class is a (family, parameter) tuple rendered in two modalities:
"photo" = filled, textured shape over a noisy background; "sketch" = thin
jittered contour on white. The two renderings of one instance share the
same base geometry, so instance-level pairing is meaningful.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError
from .seeding import derive_seed

FAMILIES = ("polygon", "ellipse", "star", "cross")
MODALITIES = ("photo", "sketch")

IMAGE_SIZE = 32
BACKGROUND_NOISE_MAX = 0.3
SKETCH_JITTER_FRAC = 0.05  # vertex jitter sigma, fraction of image width
FILL_BAND_HALF_WIDTH = 0.1


@dataclass(frozen=True)
class ShapeSpec:
    """One shape class: geometry family plus rendering parameters."""

    class_id: int
    family: str
    vertices: int
    aspect: float
    rotation: float
    fill: float
    texture_freq: float

    @property
    def params(self):
        return (self.vertices, self.aspect, self.rotation, self.fill, self.texture_freq)

    @property
    def fill_band(self):
        return (self.fill - FILL_BAND_HALF_WIDTH, self.fill + FILL_BAND_HALF_WIDTH)

    def to_dict(self):
        return {
            "class_id": self.class_id,
            "family": self.family,
            "vertices": self.vertices,
            "aspect": self.aspect,
            "rotation": self.rotation,
            "fill": self.fill,
            "texture_freq": self.texture_freq,
        }

    @staticmethod
    def from_dict(d):
        return ShapeSpec(**d)


@dataclass
class ModalitySample:
    """One rendered image in one modality."""

    pixels: np.ndarray  # (H, W, 1) float32 in [0, 1]
    modality: str
    class_id: int
    instance_id: int


@dataclass
class PairedDataset:
    photos: list
    sketches: list
    pairing_mode: str  # instance_level | class_level
    num_classes: int
    seed: int
    specs: list = field(default_factory=list)


def build_class_specs(num_classes: int, seed: int) -> list:
    """Deterministic, pairwise-distinct shape specs for `num_classes` classes."""
    if num_classes < 2:
        raise InvalidArgumentError(f"num_classes must be >= 2, got {num_classes}")
    rng = np.random.default_rng(derive_seed(seed, "class_specs"))
    specs = []
    for c in range(num_classes):
        family = FAMILIES[c % len(FAMILIES)]
        variant = c // len(FAMILIES)
        # Variants of one family must differ in outline geometry, not just
        # fill/texture, so that classes stay separable in the sketch modality.
        if family == "polygon":
            vertices = 3 + variant % 5
            aspect = rng.uniform(0.85, 1.0)
        elif family == "star":
            vertices = 4 + variant % 5
            aspect = rng.uniform(0.85, 1.0)
        elif family == "ellipse":
            # squished only: round ellipses collide with jittered polygons
            vertices = 24
            aspect = 0.30 + 0.15 * (variant % 3) + rng.uniform(-0.02, 0.02)
        else:  # cross
            vertices = 12
            aspect = 0.55 + 0.18 * (variant % 3) + rng.uniform(-0.02, 0.02)
        specs.append(
            ShapeSpec(
                class_id=c,
                family=family,
                vertices=vertices,
                aspect=float(aspect),
                rotation=float(rng.uniform(0.0, 2.0 * np.pi)),
                fill=float(rng.uniform(0.55, 0.9)),
                texture_freq=float(rng.uniform(2.0, 6.0)),
            )
        )
    keys = {(s.family, s.params) for s in specs}
    if len(keys) != num_classes:
        raise InvalidArgumentError("class spec collision; change seed")
    return specs


def _base_outline(spec: ShapeSpec) -> np.ndarray:
    """Closed outline of the shape in unit coordinates, shape (V, 2)."""
    if spec.family == "polygon":
        angles = 2.0 * np.pi * np.arange(spec.vertices) / spec.vertices
        pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    elif spec.family == "ellipse":
        angles = 2.0 * np.pi * np.arange(spec.vertices) / spec.vertices
        pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    elif spec.family == "star":
        n = 2 * spec.vertices
        angles = 2.0 * np.pi * np.arange(n) / n
        radii = np.where(np.arange(n) % 2 == 0, 1.0, 0.45)
        pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    elif spec.family == "cross":
        w = 0.35
        pts = np.array(
            [
                (w, w), (w, 1.0), (-w, 1.0), (-w, w),
                (-1.0, w), (-1.0, -w), (-w, -w), (-w, -1.0),
                (w, -1.0), (w, -w), (1.0, -w), (1.0, w),
            ]
        )
    else:
        raise InvalidArgumentError(f"unknown family {spec.family!r}")
    pts[:, 0] *= spec.aspect
    return pts


def _transform(pts: np.ndarray, rotation, scale, center) -> np.ndarray:
    c, s = np.cos(rotation), np.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T * scale + center


def _fill_mask(pts: np.ndarray, size: int) -> np.ndarray:
    """Even-odd rasterization of a closed polygon over pixel centers."""
    yy, xx = np.mgrid[0:size, 0:size]
    px = xx + 0.5
    py = yy + 0.5
    inside = np.zeros((size, size), dtype=bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for i in range(len(pts)):
        if y1[i] == y2[i]:
            continue
        crosses = (y1[i] > py) != (y2[i] > py)
        x_at = x1[i] + (py - y1[i]) * (x2[i] - x1[i]) / (y2[i] - y1[i])
        inside ^= crosses & (px < x_at)
    return inside


def _contour_distance(pts: np.ndarray, size: int) -> np.ndarray:
    """Distance from each pixel center to the closed polyline through pts."""
    yy, xx = np.mgrid[0:size, 0:size]
    p = np.stack([xx + 0.5, yy + 0.5], axis=-1).astype(float)  # (H, W, 2)
    a = pts
    b = np.roll(pts, -1, axis=0)
    ab = b - a  # (V, 2)
    ab_len2 = np.maximum((ab ** 2).sum(axis=1), 1e-12)
    dmin = np.full((size, size), np.inf)
    for i in range(len(pts)):
        ap = p - a[i]
        t = np.clip((ap @ ab[i]) / ab_len2[i], 0.0, 1.0)
        closest = a[i] + t[..., None] * ab[i]
        d = np.sqrt(((p - closest) ** 2).sum(axis=-1))
        dmin = np.minimum(dmin, d)
    return dmin


def _hand_jitter(n_vertices: int, rng, sigma: float) -> np.ndarray:
    """Smooth cyclic vertex offsets: wobble correlated along the stroke,
    like an unsteady hand, rather than independent per-vertex noise."""
    n_ctrl = min(6, n_vertices)
    ctrl = rng.normal(0.0, sigma, size=(n_ctrl, 2))
    if n_ctrl == n_vertices:
        return ctrl
    pos = np.arange(n_vertices) * n_ctrl / n_vertices
    lo = np.floor(pos).astype(int)
    frac = (pos - lo)[:, None]
    return ctrl[lo % n_ctrl] * (1 - frac) + ctrl[(lo + 1) % n_ctrl] * frac


def _instance_geometry(spec: ShapeSpec, rng_geom, size: int):
    """Outline in pixel coordinates after per-instance pose jitter."""
    pts = _base_outline(spec)
    rotation = spec.rotation + rng_geom.normal(0.0, 0.12)
    scale = size * 0.27 * (1.0 + rng_geom.normal(0.0, 0.05))
    center = size / 2.0 + rng_geom.normal(0.0, 1.0, size=2)
    return _transform(pts, rotation, scale, center)


def render_sample(spec: ShapeSpec, modality: str, instance_seed: int) -> ModalitySample:
    """Render one instance of `spec` in the given modality.

    Deterministic in (spec, modality, instance_seed). The base geometry
    depends only on instance_seed, so the two modalities of one instance
    depict the same pose.
    """
    if modality not in MODALITIES:
        raise InvalidArgumentError(f"unknown modality {modality!r}")
    size = IMAGE_SIZE
    rng_geom = np.random.default_rng(derive_seed(instance_seed, "geom"))
    rng_mod = np.random.default_rng(derive_seed(instance_seed, modality))
    pts = _instance_geometry(spec, rng_geom, size)

    if modality == "photo":
        img = rng_mod.uniform(0.0, BACKGROUND_NOISE_MAX, size=(size, size))
        mask = _fill_mask(pts, size)
        yy, xx = np.mgrid[0:size, 0:size]
        u = (xx - size / 2) / (size / 2)
        v = (yy - size / 2) / (size / 2)
        phase = rng_mod.uniform(0.0, 2.0 * np.pi)
        texture = spec.fill + 0.08 * np.sin(spec.texture_freq * (u + v) + phase)
        img[mask] = texture[mask]
        img = np.clip(img, 0.0, 1.0)
    else:
        jitter = _hand_jitter(len(pts), rng_mod, SKETCH_JITTER_FRAC * size)
        ink = rng_mod.uniform(0.02, 0.15)
        # anti-aliased stroke: full ink within 0.45 px of the line, white
        # beyond 0.7 px, linear ramp between
        dist = _contour_distance(pts + jitter, size)
        coverage = np.clip((0.7 - dist) / 0.25, 0.0, 1.0)
        img = 1.0 - (1.0 - ink) * coverage

    return ModalitySample(
        pixels=img.astype(np.float32)[..., None],
        modality=modality,
        class_id=spec.class_id,
        instance_id=-1,
    )


def generate_dataset(
    num_classes: int,
    per_class: int,
    pairing_mode: str,
    seed: int,
    spec_seed=None,
) -> PairedDataset:
    """Class-balanced paired dataset; see `ShapeSpec` for class definitions.

    instance_level: photos[i] and sketches[i] share class_id, instance_id, and
    base geometry. class_level: sketch instances are shuffled within each
    class, so only class membership lines up at each index.

    spec_seed lets two dataset variants share identical class specs while
    drawing different instances (cross-dataset teacher experiments).
    """
    if per_class < 1:
        raise InvalidArgumentError(f"per_class must be >= 1, got {per_class}")
    if pairing_mode not in ("instance_level", "class_level"):
        raise InvalidArgumentError(f"unknown pairing_mode {pairing_mode!r}")
    specs = build_class_specs(num_classes, seed if spec_seed is None else spec_seed)

    photos, sketches = [], []
    for spec in specs:
        cls_photos, cls_sketches = [], []
        for i in range(per_class):
            inst_seed = derive_seed(seed, spec.class_id, i)
            instance_id = spec.class_id * per_class + i
            p = render_sample(spec, "photo", inst_seed)
            s = render_sample(spec, "sketch", inst_seed)
            p.instance_id = instance_id
            s.instance_id = instance_id
            cls_photos.append(p)
            cls_sketches.append(s)
        if pairing_mode == "class_level":
            order = np.random.default_rng(
                derive_seed(seed, "class_shuffle", spec.class_id)
            ).permutation(per_class)
            cls_sketches = [cls_sketches[j] for j in order]
        photos.extend(cls_photos)
        sketches.extend(cls_sketches)

    return PairedDataset(
        photos=photos,
        sketches=sketches,
        pairing_mode=pairing_mode,
        num_classes=num_classes,
        seed=seed,
        specs=specs,
    )


def split(dataset: PairedDataset, test_fraction: float, seed: int):
    """Stratified train/test split, disjoint by instance_id across modalities."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError(f"test_fraction must be in (0, 1), got {test_fraction}")

    test_ids = set()
    for spec in dataset.specs:
        cls_ids = sorted(
            {s.instance_id for s in dataset.photos if s.class_id == spec.class_id}
        )
        n_test = int(round(len(cls_ids) * test_fraction))
        if n_test < 1 or n_test >= len(cls_ids):
            raise InvalidArgumentError(
                f"test_fraction {test_fraction} leaves an empty split for class {spec.class_id}"
            )
        order = np.random.default_rng(
            derive_seed(seed, "split", spec.class_id)
        ).permutation(len(cls_ids))
        test_ids.update(cls_ids[j] for j in order[:n_test])

    def subset(in_test):
        return PairedDataset(
            photos=[s for s in dataset.photos if (s.instance_id in test_ids) == in_test],
            sketches=[s for s in dataset.sketches if (s.instance_id in test_ids) == in_test],
            pairing_mode=dataset.pairing_mode,
            num_classes=dataset.num_classes,
            seed=dataset.seed,
            specs=dataset.specs,
        )

    return subset(False), subset(True)


def pixels_array(samples) -> np.ndarray:
    """Stack sample pixels into an (N, H, W, 1) float32 array."""
    if not samples:
        return np.zeros((0, IMAGE_SIZE, IMAGE_SIZE, 1), dtype=np.float32)
    return np.stack([s.pixels for s in samples]).astype(np.float32)


def labels_array(samples) -> np.ndarray:
    return np.array([s.class_id for s in samples], dtype=np.int64)


def filter_classes(dataset: PairedDataset, keep) -> PairedDataset:
    """Restrict both modalities to the given class ids."""
    keep = set(keep)
    return PairedDataset(
        photos=[s for s in dataset.photos if s.class_id in keep],
        sketches=[s for s in dataset.sketches if s.class_id in keep],
        pairing_mode=dataset.pairing_mode,
        num_classes=dataset.num_classes,
        seed=dataset.seed,
        specs=dataset.specs,
    )


def save_dataset(dataset: PairedDataset, path: str, previews=True):
    """Write meta.json plus one .npy pixel array per modality (+ preview grids)."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "num_classes": dataset.num_classes,
        "pairing_mode": dataset.pairing_mode,
        "seed": dataset.seed,
        "image_size": IMAGE_SIZE,
        "specs": [s.to_dict() for s in dataset.specs],
    }
    for modality, samples in (("photos", dataset.photos), ("sketches", dataset.sketches)):
        arr = pixels_array(samples)
        np.save(os.path.join(path, f"{modality}.npy"), arr)
        meta[modality] = {
            "file": f"{modality}.npy",
            "shape": list(arr.shape),
            "dtype": "float32",
            "labels": [int(s.class_id) for s in samples],
            "instance_ids": [int(s.instance_id) for s in samples],
        }
        if previews and samples:
            save_grid(arr[:64, ..., 0], os.path.join(path, f"{modality}_preview.png"))
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_dataset(path: str) -> PairedDataset:
    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)
    out = {}
    for modality, tag in (("photos", "photo"), ("sketches", "sketch")):
        arr = np.load(os.path.join(path, meta[modality]["file"]))
        out[modality] = [
            ModalitySample(
                pixels=arr[i],
                modality=tag,
                class_id=meta[modality]["labels"][i],
                instance_id=meta[modality]["instance_ids"][i],
            )
            for i in range(arr.shape[0])
        ]
    return PairedDataset(
        photos=out["photos"],
        sketches=out["sketches"],
        pairing_mode=meta["pairing_mode"],
        num_classes=meta["num_classes"],
        seed=meta["seed"],
        specs=[ShapeSpec.from_dict(d) for d in meta["specs"]],
    )


def save_grid(images: np.ndarray, path: str, cols=8):
    """Tile (N, H, W) images in [0,1] into one grayscale PNG."""
    n, h, w = images.shape
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    grid = np.ones((rows * h, cols * w), dtype=np.float32)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = images[i]
    Image.fromarray((np.clip(grid, 0, 1) * 255).astype(np.uint8), mode="L").save(path)
