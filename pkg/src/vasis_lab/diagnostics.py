"""Measurements of intra-class variation and class-level mode collapse.

All probes run on a float64 copy of the generator so that "exactly
constant" results are not blurred by float32 round-off.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .core import RngStream, one_hot_encode
from .data_io import MOTIF_SIZE, motif_patch
from .networks import Generator, GeneratorSpec


@dataclass
class ProbeReport:
    block_stds: list
    fingerprint: str
    layout: str
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(s < 0 for _, s in self.block_stds):
            raise ValueError("standard deviations must be non-negative")

    def stds(self):
        return [s for _, s in self.block_stds]


def fingerprint(obj):
    return hashlib.sha256(repr(obj).encode()).hexdigest()[:12]


def class_boundary_map(labels, include_padding_border=False):
    """Pixels whose 3x3 in-image neighbourhood contains another label.

    With ``include_padding_border`` the outermost ring is marked too (a
    zero-padded convolution sees a synthetic boundary there).
    """
    labels = torch.as_tensor(labels)
    if labels.dim() == 2:
        labels = labels[None]
    if labels.dim() == 4:
        labels = labels.argmax(1)
    lab = labels.long()
    b, h, w = lab.shape
    mask = torch.zeros(b, h, w, dtype=torch.bool)
    for dy, dx in itertools.product((-1, 0, 1), repeat=2):
        if dy == dx == 0:
            continue
        ys, yd = (slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0)))
        xs, xd = (slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0)))
        mask[:, yd, xd] |= lab[:, ys, xs] != lab[:, yd, xd]
    if include_padding_border:
        mask[:, 0, :] = mask[:, -1, :] = True
        mask[:, :, 0] = mask[:, :, -1] = True
    return mask


def _probe_copy(generator):
    return copy.deepcopy(generator).double().eval()


def default_latent(generator, batch=1, seed=0):
    return RngStream(seed, 101).normal((batch, generator.spec.latent_dim), dtype=torch.float64)


def spatial_std(feature):
    """Spatial std per (sample, channel), averaged over channels and samples."""
    return float(feature.std(dim=(2, 3), unbiased=False).mean())


@torch.no_grad()
def per_block_std_probe(generator, layout, seed=0, latent=None, noise=True):
    """Per-block spatial std of post-block activations on ``layout``.

    ``noise=False`` runs the noise branch with z = 0.
    """
    gen = _probe_copy(generator)
    layout = layout.double()
    latent = latent.double() if latent is not None else default_latent(gen, layout.shape[0], seed)
    rng = RngStream(seed, 102) if noise else None
    img, feats = gen(latent, layout, rng, return_features=True, strict_size=False)
    stds = [(name, spatial_std(f)) for name, f in zip(gen.block_names, feats)]
    stds.append(("image", spatial_std(img)))
    classes = sorted(set(layout.argmax(1).unique().tolist()))
    desc = f"{tuple(layout.shape)} classes={classes}"
    return ProbeReport(stds, fingerprint((gen.spec, seed)), desc,
                       extras={"border_ratio": [border_ratio(f) for f in feats]})


def border_ratio(feature, band=1):
    """Mean absolute deviation from the spatial median in the outer band vs the interior.

    Large values mean variation is concentrated at the image border.
    """
    dev = (feature - feature.median(dim=-1, keepdim=True).values
           .median(dim=-2, keepdim=True).values).abs().mean(dim=(0, 1))
    h, w = dev.shape
    if h <= 2 * band or w <= 2 * band:
        return float("nan")
    inner = dev[band:h - band, band:w - band]
    total = dev.sum()
    outer_mean = (total - inner.sum()) / (h * w - inner.numel())
    inner_mean = inner.mean()
    if inner_mean == 0:
        return float("inf") if outer_mean > 0 else 1.0
    return float(outer_mean / inner_mean)


def intra_class_std(image, labels, num_classes=None):
    """Per-class pixel std inside each image, averaged over channels and over images.

    The std is taken within one image at a time, so differences between
    samples do not count as intra-class variation. Returns a masked array;
    classes with no pixels anywhere are masked (absent), not 0.
    """
    img = np.asarray(image.detach().cpu() if torch.is_tensor(image) else image, dtype=np.float64)
    lab = np.asarray(labels.cpu() if torch.is_tensor(labels) else labels)
    if img.ndim == 3:
        img, lab = img[None], lab[None] if lab.ndim == 2 else lab
    if lab.ndim == 4:
        lab = lab.argmax(1)
    if img.shape[0] != lab.shape[0] or img.shape[2:] != lab.shape[1:]:
        raise ValueError(f"image {img.shape} and labels {lab.shape} are not aligned")
    n = num_classes or int(lab.max()) + 1
    out = np.ma.masked_all(n, dtype=np.float64)
    for c in range(n):
        vals = [im[:, m].std(axis=1).mean() for im, m in zip(img, lab == c) if m.any()]
        if vals:
            out[c] = np.mean(vals)
    return out


def pairwise_pearson(patches):
    """Mean Pearson correlation over all unordered pairs of flattened patches."""
    x = np.asarray([np.asarray(p, dtype=np.float64).ravel() for p in patches])
    if x.shape[0] < 2:
        raise ValueError("collapse score needs at least 2 patches")
    x = x - x.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError("a patch is constant; correlation is undefined")
    x = x / norms[:, None]
    corr = x @ x.T
    iu = np.triu_indices(x.shape[0], 1)
    return float(np.clip(corr[iu].mean(), -1.0, 1.0))


def default_placements(generator, canvas=None):
    """Four motif offsets that keep every receptive field inside the canvas.

    Offsets are multiples of ``2 ** num_blocks`` so the per-level layouts
    are exact translates of each other.
    """
    spec = generator.spec
    step = 2 ** spec.num_blocks
    if spec.variant.position_kind == "relative":
        # no exact bound exists; use the local part of the network
        spec = GeneratorSpec(**{**spec.__dict__, "variant": spec.variant.with_(position_kind="none")})
    margin = receptive_radius(spec)
    lo = -(-margin // step) * step
    hi = lo + 3 * step
    canvas = canvas or (-(-(hi + MOTIF_SIZE + margin) // step) * step)
    return [(lo, lo), (lo, hi), (hi, lo), (hi, hi)], canvas


def receptive_radius(spec):
    """Upper bound, in output pixels, on how far a layout change can spread.

    Per block (in that level's pixels): two 3x3 convs, the semantic path's
    own reach, and one pixel of slack for nearest upsampling. Relative
    position codes depend on whole class regions and have no finite bound.
    """
    cfg = spec.variant
    if cfg.position_kind == "relative":
        raise ValueError("relative position codes are not local")
    reach = 2 * (cfg.kernel_size // 2) if cfg.semantic_path == "spade_conv" else 0
    radius = 1
    for i in range(spec.num_blocks):
        radius += 2 ** (spec.num_blocks - 1 - i) * (reach + 3)
    return radius


@torch.no_grad()
def collapse_score(generator, motif_labels=None, placements=None, canvas=None,
                   background=0, seed=0, latent=None, noise=True):
    """Similarity of generated patches wherever the same motif is placed.

    One image per placement is generated on a constant ``background``
    canvas holding the motif at that offset (same latent for all, fresh
    noise each); the patch under the motif is cut out and the score is the
    mean pairwise Pearson correlation. 1.0 means identical patterns.
    """
    gen = _probe_copy(generator)
    motif = np.asarray(motif_labels if motif_labels is not None else motif_patch())
    if placements is None:
        placements, default_canvas = default_placements(gen)
        canvas = canvas or default_canvas
    canvas = canvas or gen.spec.resolution
    placements = list(placements)
    if len(placements) < 2:
        raise ValueError("collapse score needs at least 2 placements")
    mh, mw = motif.shape
    layouts = []
    for y, x in placements:
        if y < 0 or x < 0 or y + mh > canvas or x + mw > canvas:
            raise ValueError(f"placement {(y, x)} puts the {mh}x{mw} motif outside a {canvas}x{canvas} canvas")
        lab = np.full((canvas, canvas), background, dtype=np.int64)
        lab[y:y + mh, x:x + mw] = motif
        layouts.append(lab)
    layout = one_hot_encode(torch.from_numpy(np.stack(layouts)), gen.spec.num_classes, torch.float64)
    if latent is None:
        latent = default_latent(gen, 1, seed)
    latent = latent.double().expand(len(placements), -1)
    rng = RngStream(seed, 103) if noise else None
    img = gen(latent, layout, rng, strict_size=False).numpy()
    patches = [img[i, :, y:y + mh, x:x + mw] for i, (y, x) in enumerate(placements)]
    return pairwise_pearson(patches)


def single_class_layout(num_classes, resolution, cls=0, batch=1, dtype=torch.float64):
    labels = torch.full((batch, resolution, resolution), cls, dtype=torch.long)
    return one_hot_encode(labels, num_classes, dtype)


@dataclass
class AblationRow:
    padding: str
    kernel: int
    probe: ProbeReport
    collapse: float

    @property
    def mean_std(self):
        return float(np.mean(self.probe.stds()))


def padding_kernel_ablation(base_spec, seed=0, layout=None, build=None):
    """Probe the four (padding, kernel) cells of an untrained generator.

    Every cell uses the same init seed; ``layout`` defaults to a single-class
    map at the generator's resolution.
    """
    from .training import build_models

    layout = layout if layout is not None else single_class_layout(base_spec.num_classes, base_spec.resolution)
    rows = []
    for padding, kernel in itertools.product(("zero", "reflect"), (1, 3)):
        spec = GeneratorSpec(**{**base_spec.__dict__,
                                "variant": base_spec.variant.with_(padding_mode=padding, kernel_size=kernel)})
        gen = build(spec) if build else build_models(spec, _dummy_dspec(spec), seed)[0]
        probe = per_block_std_probe(gen, layout, seed=seed)
        rows.append(AblationRow(padding, kernel, probe, collapse_score(gen, seed=seed)))
    return rows


def _dummy_dspec(spec):
    from .networks import DiscriminatorSpec
    return DiscriminatorSpec(spec.num_classes)


def format_ablation(rows):
    names = [n for n, _ in rows[0].probe.block_stds]
    header = "padding  kernel  " + "  ".join(f"{n:>14}" for n in names) + "  collapse"
    lines = [header, "-" * len(header)]
    for r in rows:
        vals = "  ".join(f"{s:14.3e}" for s in r.probe.stds())
        lines.append(f"{r.padding:<7}  k{r.kernel:<5}  {vals}  {r.collapse:8.5f}")
    return "\n".join(lines)


def generator_for(spec, seed=0):
    from .training import build_models
    return build_models(spec, _dummy_dspec(spec), seed)[0]


__all__ = [
    "ProbeReport", "AblationRow", "class_boundary_map", "per_block_std_probe", "intra_class_std",
    "collapse_score", "padding_kernel_ablation", "format_ablation", "single_class_layout",
    "border_ratio", "pairwise_pearson", "default_placements", "receptive_radius", "generator_for",
    "Generator",
]
