"""Frechet distance, segmentation scores and analytic parameter/FLOP accounting.

FLOPs are reported as ``2 * MACs``. Only convolutions and linear layers
are counted; per-class lookups, noise scaling and normalisation
arithmetic count as zero MACs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .data_io import palette_segment
from .networks import DiscriminatorSpec, GeneratorSpec, RandomConvPyramid

FLOPS_CONVENTION = "FLOPs = 2 x MACs (conv/linear only; lookups and elementwise ops are free)"
EMBEDDER_SEED = 7


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean dim {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8, rtol=0):
            raise ValueError("covariance is not symmetric")
        if d and np.linalg.eigvalsh(self.cov).min() < -1e-6 * max(1.0, np.abs(self.cov).max()):
            raise ValueError("covariance is not positive semi-definite")

    @property
    def dim(self):
        return self.mean.shape[0]


def gaussian_fit(features):
    """Sample mean and unbiased (n - 1) covariance of an ``(n, d)`` matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianFit(mean, (cov + cov.T) / 2)


def _psd_sqrt(mat):
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    clamp = float(max(0.0, -vals.min())) if vals.size else 0.0
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T, clamp


def frechet_distance(a, b, return_clamp=False):
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace of the product's square root is taken from the eigenvalues
    of the symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``, which shares them
    with ``S_a S_b``. Negative eigenvalues from round-off are clamped to 0;
    the largest clamp magnitude is returned with ``return_clamp=True``.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a, clamp_a = _psd_sqrt(a.cov)
    mid = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh((mid + mid.T) / 2)
    clamp = max(clamp_a, float(max(0.0, -vals.min())))
    tr_sqrt = float(np.sqrt(np.clip(vals, 0, None)).sum())
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * tr_sqrt)
    value = max(value, 0.0)
    return (value, clamp) if return_clamp else value


class RandomEmbedder:
    """Frozen random conv pyramid + global average pooling -> 64-d features.

    Weights come from ``EMBEDDER_SEED``; distances are only comparable
    between runs of this package.
    """

    def __init__(self, seed=EMBEDDER_SEED, widths=(16, 32, 64)):
        self.net = RandomConvPyramid(widths, seed=seed).double().eval()
        self.dim = widths[-1]

    @torch.no_grad()
    def __call__(self, images):
        x = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images).double()
        return self.net(x)[-1].mean(dim=(2, 3)).numpy()


def resize_bicubic(images, size):
    x = torch.as_tensor(images).double()
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bicubic", align_corners=False, antialias=True)


def fid_pipeline(images_a, images_b, embedder=None):
    """Frechet distance between embedded image sets.

    ``images_a`` is the generated set; ``images_b`` is the reference set and
    is resized (bicubic) to ``images_a``'s resolution when both are image
    batches. 2-D inputs are treated as precomputed features when
    ``embedder`` is None.
    """
    if len(images_a) == 0 or len(images_b) == 0:
        raise ValueError("both image sets must be non-empty")
    a = images_a.detach() if torch.is_tensor(images_a) else np.asarray(images_a)
    b = images_b.detach() if torch.is_tensor(images_b) else np.asarray(images_b)
    if a.ndim == 4 and b.ndim == 4:
        b = resize_bicubic(b, a.shape[-2:])
        embedder = embedder or RandomEmbedder()
    if embedder is not None:
        a, b = embedder(a), embedder(b)
    return frechet_distance(gaussian_fit(np.asarray(a)), gaussian_fit(np.asarray(b)))


def miou_acc(pred, gt, num_classes):
    """Pixel accuracy, mean IoU over classes present in ``gt``, and per-class IoU.

    Per-class IoU is NaN for classes absent from ``gt``.
    """
    pred = np.asarray(pred.cpu() if torch.is_tensor(pred) else pred)
    gt = np.asarray(gt.cpu() if torch.is_tensor(gt) else gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    acc = float((pred == gt).mean())
    ious = np.full(num_classes, np.nan)
    for c in range(num_classes):
        g = gt == c
        if not g.any():
            continue
        p = pred == c
        ious[c] = (p & g).sum() / (p | g).sum()
    return float(np.nanmean(ious)), acc, ious


class PaletteSegmenter:
    """Labels each pixel with the nearest class base colour."""

    def __init__(self, colors):
        self.colors = np.asarray(colors, dtype=np.float64)

    def __call__(self, images):
        return palette_segment(images, self.colors)


# ---------------------------------------------------------------------------
# parameter / FLOP accounting

@dataclass
class CostReport:
    params: int
    flops: int
    resolution: int
    breakdown: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.params < 0 or self.flops < 0:
            raise ValueError("counts must be non-negative")

    @property
    def macs(self):
        return self.flops // 2

    @property
    def modulation_params(self):
        return self.breakdown.get("modulation", 0)


class _Counter:
    def __init__(self):
        self.params, self.macs = {}, {}

    def add(self, group, params=0, macs=0):
        self.params[group] = self.params.get(group, 0) + int(params)
        self.macs[group] = self.macs.get(group, 0) + int(macs)

    def conv(self, group, cin, cout, k, h, w, bias=True):
        weights = cin * cout * k * k
        self.add(group, weights + (cout if bias else 0), weights * h * w)


def conv_cost(cin, cout, k, h_out, w_out, bias=True):
    """(params, MACs) for one convolution; MACs = weights (no bias) x output pixels."""
    weights = cin * cout * k * k
    return weights + (cout if bias else 0), weights * h_out * w_out


def _norm_cost(counter, channels, n, cfg, hidden, res):
    sem_w, noise_w = cfg.widths(channels)
    k = cfg.kernel_size
    if cfg.semantic_path == "spade_conv":
        counter.conv("modulation", n, hidden, k, res, res)
        counter.conv("modulation", hidden, sem_w, k, res, res)
        counter.conv("modulation", hidden, sem_w, k, res, res)
    else:
        counter.add("modulation", 2 * n * sem_w)
    if cfg.noise_enabled:
        rows = 1 if cfg.combine_mode == "rand" else n
        counter.add("modulation", 2 * 2 * rows * noise_w)
    if cfg.position_kind != "none":
        counter.conv("modulation", 2, sem_w, 3, res, res)
        counter.conv("modulation", 2, sem_w, 3, res, res)
    if cfg.position_kind == "learnable":
        counter.add("modulation", 2 * res * res)


def generator_cost(spec, resolution=None):
    resolution = resolution or spec.resolution
    factor = 2 ** spec.num_blocks
    if resolution % factor:
        raise ValueError(f"resolution {resolution} is not a multiple of {factor}")
    counter = _Counter()
    chans = spec.block_channels()
    counter.add("trunk", spec.latent_dim * chans[0][0] + chans[0][0], spec.latent_dim * chans[0][0])
    n, cfg = spec.num_classes, spec.variant
    for i, (fin, fout, _) in enumerate(chans):
        res = resolution // factor * 2 ** (i + 1)
        fmid = min(fin, fout)
        for c in ([fin, fmid] + ([fin] if fin != fout else [])):
            _norm_cost(counter, c, n, cfg, spec.hidden, res)
        counter.conv("trunk", fin, fmid, 3, res, res)
        counter.conv("trunk", fmid, fout, 3, res, res)
        if fin != fout:
            counter.conv("trunk", fin, fout, 1, res, res, bias=False)
    counter.conv("trunk", chans[-1][1], 3, 3, resolution, resolution)
    return counter


def discriminator_cost(spec, resolution):
    counter = _Counter()
    if spec.kind == "patch_multiscale":
        size = resolution
        for k in range(spec.scales):
            if k:
                size = (size - 1) // 2 + 1
            c, h = 3 + spec.num_classes, size
            for i in range(spec.depth):
                cout = spec.base_channels * 2 ** min(i, 2)
                if i < 2:
                    h = h // 2
                    counter.conv("disc", c, cout, 4, h, h)
                else:
                    counter.conv("disc", c, cout, 3, h, h)
                c = cout
            counter.conv("disc", c, 1, 3, h, h)
    else:
        widths = [spec.base_channels * 2 ** min(i, 2) for i in range(spec.depth)]
        c, h = 3, resolution
        for wd in widths:
            h = (h - 1) // 2 + 1
            counter.conv("disc", c, wd, 3, h, h)
            c = wd
        for i in reversed(range(spec.depth)):
            h *= 2
            skip = widths[i - 1] if i > 0 else 0
            wout = widths[i - 1] if i > 0 else spec.base_channels
            counter.conv("disc", c + skip, wout, 3, h, h)
            c = wout
        counter.conv("disc", c, spec.num_classes + 1, 1, h, h)
    return counter


def count_params_flops(spec, resolution=None):
    """Analytic :class:`CostReport` for a generator or discriminator spec."""
    if isinstance(spec, GeneratorSpec):
        resolution = resolution or spec.resolution
        counter = generator_cost(spec, resolution)
    elif isinstance(spec, DiscriminatorSpec):
        if resolution is None:
            raise ValueError("discriminator cost needs a resolution")
        counter = discriminator_cost(spec, resolution)
    else:
        raise TypeError(f"expected GeneratorSpec or DiscriminatorSpec, got {type(spec).__name__}")
    return CostReport(
        params=sum(counter.params.values()),
        flops=2 * sum(counter.macs.values()),
        resolution=resolution,
        breakdown=dict(counter.params),
    )


def enumerate_params(module):
    """Brute-force count of trainable scalars."""
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def modulation_param_names(module):
    """Parameters that belong to normalisation layers (the modulation path)."""
    return [name for name, _ in module.named_parameters() if ".norm_" in name]


def count_macs_by_hooks(module, *inputs, **kwargs):
    """MACs of every Conv2d/Linear call during one forward pass (oracle)."""
    total = [0]

    def conv_hook(mod, inp, out):
        total[0] += mod.weight.numel() * out.shape[-1] * out.shape[-2]

    def linear_hook(mod, inp, out):
        total[0] += mod.weight.numel()

    handles = []
    for m in module.modules():
        if isinstance(m, torch.nn.Conv2d):
            handles.append(m.register_forward_hook(conv_hook))
        elif isinstance(m, torch.nn.Linear):
            handles.append(m.register_forward_hook(linear_hook))
    try:
        with torch.no_grad():
            module(*inputs, **kwargs)
    finally:
        for h in handles:
            h.remove()
    return total[0]


def intra_class_summary(stds):
    """Mean of the present entries of a masked per-class std vector."""
    present = np.ma.compressed(stds)
    return float(present.mean()) if present.size else math.nan
