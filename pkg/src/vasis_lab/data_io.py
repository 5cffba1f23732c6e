"""Synthetic layout/image pairs and on-disk formats for label maps, images and datasets.

Rendering rule: ``image = base_color[label] + u`` with ``u ~ U[-a, a]``
drawn independently per pixel and channel (``a`` is the class's texture
amplitude), then clipped to [-1, 1]. Per-channel std inside a class is
therefore ``a / sqrt(3)`` when no clipping occurs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import RngStream

FAMILIES = ("stripes", "blobs", "sky_road", "motif_grid")

# Well-separated colours in [-1, 1]; kept away from the range ends so
# moderate textures do not clip.
DEFAULT_PALETTE = [
    (-0.5, -0.1, 0.6), (0.3, 0.4, -0.5), (0.6, -0.5, -0.2), (-0.6, 0.5, -0.1),
    (0.0, -0.6, 0.5), (0.5, 0.5, 0.5), (-0.5, -0.5, -0.5), (0.6, 0.1, 0.6),
]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 2
    resolution: int = 64
    family: str = "sky_road"
    colors: tuple = ()
    amplitudes: tuple = ()
    count: int = 64
    seed: int = 0
    class_names: tuple = ()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DatasetError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.num_classes < 1 or self.resolution < 2 or self.count < 1:
            raise DatasetError(f"invalid synthetic spec {self}")
        if self.family == "sky_road" and self.num_classes != 2:
            raise DatasetError("sky_road scenes have exactly 2 classes")
        if self.family == "motif_grid" and self.num_classes < 2:
            raise DatasetError("motif_grid needs a background and a motif class")
        if not self.colors:
            if self.num_classes > len(DEFAULT_PALETTE):
                raise DatasetError(f"give explicit colors for more than {len(DEFAULT_PALETTE)} classes")
            object.__setattr__(self, "colors", tuple(DEFAULT_PALETTE[: self.num_classes]))
        object.__setattr__(self, "colors", tuple(tuple(float(v) for v in c) for c in self.colors))
        if not self.amplitudes:
            object.__setattr__(self, "amplitudes", (0.0,) * self.num_classes)
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        if not self.class_names:
            object.__setattr__(self, "class_names", tuple(f"class{i}" for i in range(self.num_classes)))
        if len(self.colors) != self.num_classes or len(self.amplitudes) != self.num_classes:
            raise DatasetError("colors and amplitudes need one entry per class")
        if len(set(self.colors)) != len(self.colors):
            raise DatasetError(f"class colors collide: {self.colors}")
        if any(len(c) != 3 for c in self.colors):
            raise DatasetError("colors must be RGB triples")
        if any(a < 0 for a in self.amplitudes):
            raise DatasetError("texture amplitudes must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("colors", "amplitudes", "class_names"):
            if key in data:
                data[key] = tuple(tuple(v) if isinstance(v, list) else v for v in data[key])
        return cls(**data)


# ---------------------------------------------------------------------------
# scene families

def _stripes(spec, rng, index):
    r, n = spec.resolution, spec.num_classes
    bounds = np.sort(rng.integers(1, r, size=max(n - 1, 0)))
    edges = np.concatenate([[0], bounds, [r]])
    labels = np.zeros((r, r), dtype=np.int64)
    offset = index % n
    for k in range(len(edges) - 1):
        labels[:, edges[k]:edges[k + 1]] = (k + offset) % n
    if index % 2:
        labels = labels.T.copy()
    return labels


def _blobs(spec, rng, index):
    r, n = spec.resolution, spec.num_classes
    labels = np.full((r, r), index % n, dtype=np.int64)
    yy, xx = np.mgrid[:r, :r]
    for k in range(1, n):
        cls = (index + k) % n
        cy, cx = rng.uniform(0, r, size=2)
        rad = rng.uniform(r / 8, r / 3)
        labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad ** 2] = cls
    return labels


def sky_road_boundary(spec, rng):
    r = spec.resolution
    return int(rng.integers(r // 4, 3 * r // 4 + 1))


def _sky_road(spec, rng, index):
    r = spec.resolution
    labels = np.zeros((r, r), dtype=np.int64)
    labels[sky_road_boundary(spec, rng):] = 1
    return labels


MOTIF_SIZE = 16


def motif_patch(size=MOTIF_SIZE, inner=None, background=0, motif=1):
    """A square-in-field motif: ``inner`` x ``inner`` square centred in a ``size`` patch."""
    inner = inner or size // 2
    patch = np.full((size, size), background, dtype=np.int64)
    lo = (size - inner) // 2
    patch[lo:lo + inner, lo:lo + inner] = motif
    return patch


def motif_offsets(resolution, size=MOTIF_SIZE):
    """Grid offsets spaced by ``2 * size`` starting at ``size // 2``."""
    step = 2 * size
    starts = range(size // 2, resolution - size + 1, step)
    return [(y, x) for y in starts for x in starts]


def _motif_grid(spec, rng, index):
    r, n = spec.resolution, spec.num_classes
    labels = np.zeros((r, r), dtype=np.int64)
    motif_cls = 1 + index % (n - 1)
    patch = motif_patch(motif=motif_cls)
    for y, x in motif_offsets(r):
        labels[y:y + MOTIF_SIZE, x:x + MOTIF_SIZE] = patch
    return labels


_FAMILY_FUNCS = {"stripes": _stripes, "blobs": _blobs, "sky_road": _sky_road, "motif_grid": _motif_grid}


def render(labels, spec, rng):
    colors = np.asarray(spec.colors, dtype=np.float64)
    amps = np.asarray(spec.amplitudes, dtype=np.float64)
    img = colors[labels].transpose(2, 0, 1)
    noise = rng.uniform(-1.0, 1.0, size=img.shape) * amps[labels][None]
    return np.clip(img + noise, -1.0, 1.0).astype(np.float32)


def generate_sample(spec, index):
    rng = RngStream(spec.seed, index)
    labels = _FAMILY_FUNCS[spec.family](spec, rng, index)
    return labels, render(labels, spec, rng)


def generate_dataset(spec):
    """Deterministic list of ``(labels (H, W) int64, image (3, H, W) float32)``."""
    samples = [generate_sample(spec, i) for i in range(spec.count)]
    seen = set()
    for labels, _ in samples:
        seen.update(np.unique(labels).tolist())
    missing = sorted(set(range(spec.num_classes)) - seen)
    if missing:
        raise DatasetError(f"classes {missing} never appear; increase count or change family")
    return samples


def stack_dataset(samples):
    labels = np.stack([s[0] for s in samples])
    images = np.stack([s[1] for s in samples])
    return labels, images


# ---------------------------------------------------------------------------
# label maps

def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".palette.txt")


def save_label_map(labels, path, colors=None, class_names=None):
    """8-bit single-channel PNG plus ``<stem>.palette.txt`` (index name r g b)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DatasetError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise DatasetError(f"labels must lie in [0, 255] for an 8-bit container, max is {labels.max()}")
    path = Path(path)
    n = int(labels.max()) + 1
    if colors is None:
        colors = [DEFAULT_PALETTE[i % len(DEFAULT_PALETTE)] for i in range(n)]
    if class_names is None:
        class_names = [f"class{i}" for i in range(len(colors))]
    if len(colors) < n or len(class_names) != len(colors):
        raise DatasetError("palette must cover every label present")
    Image.fromarray(labels.astype(np.uint8), mode="L").save(path, format="PNG")
    lines = [f"{i} {name} {c[0]:.6g} {c[1]:.6g} {c[2]:.6g}"
             for i, (name, c) in enumerate(zip(class_names, colors))]
    sidecar_path(path).write_text("\n".join(lines) + "\n")


def load_palette(path):
    side = sidecar_path(path)
    if not side.exists():
        raise DatasetError(f"missing palette sidecar: expected {side}")
    names, colors = [], []
    for lineno, line in enumerate(side.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            idx, name, rgb = int(parts[0]), parts[1], tuple(float(v) for v in parts[2:5])
        except (ValueError, IndexError):
            raise DatasetError(f"malformed palette line {lineno} in {side}") from None
        if idx != len(names) or len(rgb) != 3 or len(parts) != 5:
            raise DatasetError(f"malformed palette line {lineno} in {side}")
        names.append(name)
        colors.append(rgb)
    return names, colors


def load_label_map(path, with_palette=False):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such label map: {path}")
    names, colors = load_palette(path)
    with Image.open(path) as im:
        if im.mode != "L":
            raise DatasetError(f"{path} is not an 8-bit single-channel image (mode {im.mode})")
        labels = np.asarray(im, dtype=np.int64)
    if labels.max() >= len(colors):
        raise DatasetError(f"{path} has label {labels.max()} missing from its palette")
    return (labels, names, colors) if with_palette else labels


# ---------------------------------------------------------------------------
# images

def to_display(images):
    """[-1, 1] -> uint8 via ``round((v + 1) / 2 * 255)``, clipped."""
    arr = np.asarray(images, dtype=np.float64)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def tile_images(images, columns):
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape[0] < 1:
        raise ValueError("need at least one image")
    n, c, h, w = images.shape
    rows = -(-n // columns)
    grid = np.zeros((c, rows * h, columns * w), dtype=images.dtype)
    for i in range(n):
        r, q = divmod(i, columns)
        grid[:, r * h:(r + 1) * h, q * w:(q + 1) * w] = images[i]
    return grid


def save_image_grid(images, path, columns):
    """Tile ``(N, 3, H, W)`` images row-major and save one PNG; returns the uint8 grid."""
    images = np.asarray(images.detach().cpu() if hasattr(images, "detach") else images)
    columns = max(1, min(columns, images.shape[0] if images.ndim == 4 else 1))
    grid = to_display(tile_images(images, columns)).transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(grid)).save(path)
    return grid


# ---------------------------------------------------------------------------
# dataset directories

def save_dataset(root, spec, samples=None, force=False):
    """Write ``labels/NNNNN.png`` (+ sidecars), ``images/NNNNN.npy`` and ``manifest.json``."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"dataset directory {root} is not empty (use force to overwrite)")
        for sub in ("labels", "images"):
            for f in sorted((root / sub).glob("*")) if (root / sub).exists() else []:
                f.unlink()
    samples = samples if samples is not None else generate_dataset(spec)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for i, (labels, image) in enumerate(samples):
        save_label_map(labels, root / "labels" / f"{i:05d}.png", spec.colors, spec.class_names)
        np.save(root / "images" / f"{i:05d}.npy", image)
    manifest = {"spec": spec.to_dict(), "seed": spec.seed, "count": len(samples)}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def load_dataset(root):
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    spec = SyntheticSpec.from_dict(manifest["spec"])
    samples = []
    for i in range(manifest["count"]):
        labels = load_label_map(root / "labels" / f"{i:05d}.png")
        image_path = root / "images" / f"{i:05d}.npy"
        if not image_path.exists():
            raise DatasetError(f"missing image {image_path}")
        samples.append((labels, np.load(image_path)))
    return spec, samples


def palette_segment(images, colors):
    """Nearest-palette-colour classifier: ``(B, 3, H, W)`` -> ``(B, H, W)`` labels."""
    imgs = np.asarray(images.detach().cpu() if hasattr(images, "detach") else images, dtype=np.float64)
    pal = np.asarray(colors, dtype=np.float64)
    dist = ((imgs[:, None] - pal[None, :, :, None, None]) ** 2).sum(axis=2)
    return dist.argmin(axis=1)
