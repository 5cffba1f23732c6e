"""Toy-scale generator, discriminators and the adversarial/perceptual losses."""
from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import RngStream, downsample_layout
from .modulation import make_conv
from .vasis import VariantConfig, VasisResBlock

# Seed of the frozen random-weight feature pyramid (perceptual loss and FID embedder).
PYRAMID_SEED = 20221116


@dataclass(frozen=True)
class GeneratorSpec:
    num_classes: int
    base_channels: int = 32
    num_blocks: int = 4
    init_res: int = 4
    latent_dim: int = 64
    hidden: int = 64
    variant: VariantConfig = field(default_factory=VariantConfig)

    def __post_init__(self):
        if self.num_classes < 1 or self.num_blocks < 1 or self.init_res < 1:
            raise ValueError(f"invalid generator spec {self}")

    @property
    def resolution(self):
        return self.init_res * 2 ** self.num_blocks

    def block_channels(self):
        """[(fin, fout, resolution)] per block; the seed has ``fin`` of block 0."""
        b = self.base_channels
        outs = [max(4 * b // 2 ** i, b // 2, 2) for i in range(self.num_blocks)]
        ins = [4 * b] + outs[:-1]
        res = [self.init_res * 2 ** (i + 1) for i in range(self.num_blocks)]
        return list(zip(ins, outs, res))


@dataclass(frozen=True)
class DiscriminatorSpec:
    num_classes: int
    kind: str = "patch_multiscale"
    scales: int = 2
    base_channels: int = 32
    depth: int = 3

    def __post_init__(self):
        if self.kind not in ("patch_multiscale", "segmentation"):
            raise ValueError(f"unknown discriminator kind {self.kind!r}")
        if self.scales < 1 or self.depth < 2:
            raise ValueError(f"invalid discriminator spec {self}")


class Generator(nn.Module):
    """Latent -> spatially constant seed -> upsample + VASIS resblock per level -> RGB.

    The seed is a broadcast per-channel vector, so a single-class layout
    with reflect padding and no noise yields spatially constant features
    at every level. The network is fully convolutional: with
    ``strict_size=False`` it accepts any layout whose sides are multiples
    of ``2 ** num_blocks`` (learnable codes are then resized bilinearly).
    """

    def __init__(self, spec, rng=None):
        super().__init__()
        self.spec = spec
        rng = rng or RngStream(0, 1)
        cfg = spec.variant
        chans = spec.block_channels()
        self.fc = nn.Linear(spec.latent_dim, chans[0][0])
        self.blocks = nn.ModuleList([
            VasisResBlock(fin, fout, spec.num_classes, cfg, spec.hidden, (r, r), rng)
            for fin, fout, r in chans
        ])
        self.conv_img = make_conv(chans[-1][1], 3, 3, cfg.padding_mode)

    @property
    def block_names(self):
        return [f"block{i}_{r}x{r}" for i, (_, _, r) in enumerate(self.spec.block_channels())]

    def forward(self, latent, layout, rng=None, return_features=False, strict_size=True):
        spec = self.spec
        b, n, h, w = layout.shape
        if n != spec.num_classes:
            raise ValueError(f"layout has {n} classes, generator expects {spec.num_classes}")
        factor = 2 ** spec.num_blocks
        if strict_size and (h, w) != (spec.resolution, spec.resolution):
            raise ValueError(f"layout is {h}x{w}, generator produces {spec.resolution}x{spec.resolution}")
        if h % factor or w % factor:
            raise ValueError(f"layout sides {h}x{w} must be multiples of {factor}")
        if latent.shape != (b, spec.latent_dim):
            raise ValueError(f"latent must be ({b}, {spec.latent_dim}), got {tuple(latent.shape)}")
        x = self.fc(latent)[:, :, None, None].expand(-1, -1, h // factor, w // factor)
        feats = []
        for block in self.blocks:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(x, downsample_layout(layout, *x.shape[-2:]), rng)
            feats.append(x)
        img = torch.tanh(self.conv_img(F.leaky_relu(x, 0.2)))
        return (img, feats) if return_features else img


def generator_forward(latent, layout, generator, spec=None, rng=None):
    if spec is not None and spec != generator.spec:
        raise ValueError("spec does not match the generator")
    return generator(latent, layout, rng)


class PatchDiscriminator(nn.Module):
    """Multi-scale PatchGAN on ``cat(image, layout)``.

    Each scale: ``depth`` conv stages (4x4 stride 2 for the first two, 3x3
    stride 1 after), leaky ReLU, then a 3x3 logit conv. A 64x64 input
    gives 16x16 logits at scale 0 and 8x8 at scale 1.
    """

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        cin = 3 + spec.num_classes
        self.scales = nn.ModuleList()
        for _ in range(spec.scales):
            stages, c = nn.ModuleList(), cin
            for i in range(spec.depth):
                cout = spec.base_channels * 2 ** min(i, 2)
                conv = (nn.Conv2d(c, cout, 4, stride=2, padding=1) if i < 2
                        else nn.Conv2d(c, cout, 3, padding=1))
                stages.append(conv)
                c = cout
            stages.append(nn.Conv2d(c, 1, 3, padding=1))
            self.scales.append(stages)

    def forward(self, image, layout):
        if image.shape[-2:] != layout.shape[-2:] or image.shape[0] != layout.shape[0]:
            raise ValueError(f"image {tuple(image.shape)} and layout {tuple(layout.shape)} misaligned")
        x = torch.cat([image, layout], dim=1)
        outputs = []
        for k, stages in enumerate(self.scales):
            if k:
                x = F.avg_pool2d(x, 3, stride=2, padding=1, count_include_pad=False)
            feats, h = [], x
            for conv in stages[:-1]:
                h = F.leaky_relu(conv(h), 0.2)
                feats.append(h)
            outputs.append((stages[-1](h), feats))
        return outputs


def patch_discriminator_forward(image, layout, disc, spec=None):
    return disc(image, layout)


class SegDiscriminator(nn.Module):
    """Small encoder-decoder predicting N+1 classes per pixel (class N = fake)."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        widths = [c * 2 ** min(i, 2) for i in range(spec.depth)]
        self.down = nn.ModuleList()
        cin = 3
        for wd in widths:
            self.down.append(nn.Conv2d(cin, wd, 3, stride=2, padding=1))
            cin = wd
        self.up = nn.ModuleList()
        for i in reversed(range(spec.depth)):
            skip = widths[i - 1] if i > 0 else 0
            wout = widths[i - 1] if i > 0 else c
            self.up.append(nn.Conv2d(cin + skip, wout, 3, padding=1))
            cin = wout
        self.head = nn.Conv2d(cin, spec.num_classes + 1, 1)

    def forward(self, image):
        skips, h = [], image
        for conv in self.down:
            h = F.leaky_relu(conv(h), 0.2)
            skips.append(h)
        skips.pop()
        for conv in self.up:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            if skips:
                h = torch.cat([h, skips.pop()], dim=1)
            h = F.leaky_relu(conv(h), 0.2)
        return self.head(h)


def seg_discriminator_forward(image, disc, spec=None):
    return disc(image)


def build_discriminator(spec):
    return PatchDiscriminator(spec) if spec.kind == "patch_multiscale" else SegDiscriminator(spec)


class RandomConvPyramid(nn.Module):
    """Frozen random-weight conv pyramid used as a stand-in feature extractor.

    Stage ``i`` is conv3x3(stride 2) + ReLU with ``widths[i]`` channels.
    Weights come from ``PYRAMID_SEED`` (or ``seed``) and never train.
    """

    def __init__(self, widths=(16, 32, 64), seed=PYRAMID_SEED, in_channels=3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.convs = nn.ModuleList()
        c = in_channels
        for wd in widths:
            conv = nn.Conv2d(c, wd, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / (9 * c)) ** 0.5)
                conv.bias.zero_()
            self.convs.append(conv)
            c = wd
        self.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.relu(conv(x))
            feats.append(x)
        return feats


# ---------------------------------------------------------------------------
# losses

def hinge_d_loss(real_logits, fake_logits):
    return F.relu(1 - real_logits).mean() + F.relu(1 + fake_logits).mean()


def hinge_g_loss(fake_logits):
    return -fake_logits.mean()


def feature_matching_loss(real_feats, fake_feats):
    """Mean L1 between discriminator features, averaged over layers and scales.

    Accepts either flat lists of tensors or per-scale lists of lists.
    """
    real_flat, fake_flat = _flatten_feats(real_feats), _flatten_feats(fake_feats)
    if len(real_flat) != len(fake_flat) or not real_flat:
        raise ValueError(f"feature structures differ: {len(real_flat)} vs {len(fake_flat)} tensors")
    total = 0.0
    for r, f in zip(real_flat, fake_flat):
        if r.shape != f.shape:
            raise ValueError(f"feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
        total = total + (r.detach() - f).abs().mean()
    return total / len(real_flat)


def _flatten_feats(feats):
    out = []
    for item in feats:
        if isinstance(item, (list, tuple)):
            out.extend(_flatten_feats(item))
        else:
            out.append(item)
    return out


_default_pyramid = None


def default_extractor():
    global _default_pyramid
    if _default_pyramid is None:
        _default_pyramid = RandomConvPyramid()
    return _default_pyramid


def perceptual_loss(real_image, fake_image, extractor=None, weights=None):
    """Weighted L1 between extractor features (deeper stages weigh more)."""
    extractor = extractor or default_extractor()
    if next(extractor.parameters()).dtype != fake_image.dtype:
        extractor = extractor.to(fake_image.dtype)
    real_feats = extractor(real_image)
    fake_feats = extractor(fake_image)
    if weights is None:
        weights = [2.0 ** (i - len(real_feats) + 1) for i in range(len(real_feats))]
    return sum(w * (r - f).abs().mean() for w, r, f in zip(weights, real_feats, fake_feats))


def class_balance_weights(labels, num_classes):
    """Inverse batch frequency per class, normalised to mean 1 over present classes."""
    counts = torch.bincount(labels.reshape(-1), minlength=num_classes).to(torch.float64)
    present = counts > 0
    weights = torch.zeros(num_classes, dtype=torch.float64)
    weights[present] = 1.0 / counts[present]
    weights[present] *= present.sum() / weights[present].sum()
    return weights


def oasis_ce_loss(logits, layout, target):
    """Class-balanced per-pixel cross entropy for a segmentation discriminator.

    ``target="real"`` uses the layout's classes, ``"fake"`` the extra class
    N. Pixel weights come from the layout in both cases.
    """
    if target not in ("real", "fake"):
        raise ValueError(f"target must be 'real' or 'fake', got {target!r}")
    n = layout.shape[1]
    if logits.shape[1] != n + 1 or logits.shape[-2:] != layout.shape[-2:]:
        raise ValueError(f"logits {tuple(logits.shape)} do not match layout {tuple(layout.shape)}")
    labels = layout.argmax(1)
    weight_map = class_balance_weights(labels, n).to(logits.dtype)[labels]
    tgt = labels if target == "real" else torch.full_like(labels, n)
    ce = F.cross_entropy(logits, tgt, reduction="none")
    return (ce * weight_map).mean()
