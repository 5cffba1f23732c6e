"""Variation-aware normalisation: semantic noise and position code combined with
the SPADE or CLADE semantic path, plus the residual block that hosts it."""
from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import RngStream, layout_to_labels
from .modulation import (
    CladeModulation, ModulationPair, SpadeModulation, batch_stats, denormalize, make_conv,
)
from .noise_position import (
    PositionProjection, SemanticNoise, absolute_code, relative_code, resize_code,
)

COMBINE_MODES = ("concat", "plus", "one_channel", "rand")
POSITION_KINDS = ("absolute", "learnable", "relative", "none")
SEMANTIC_PATHS = ("spade_conv", "clade_sample")
NORM_MODES = ("batch", "instance")


@dataclass(frozen=True)
class VariantConfig:
    combine_mode: str = "concat"
    position_kind: str = "learnable"
    noise_enabled: bool = True
    kernel_size: int = 3
    padding_mode: str = "zero"
    semantic_path: str = "spade_conv"
    norm_mode: str = "batch"

    def __post_init__(self):
        for name, allowed in [
            ("combine_mode", COMBINE_MODES), ("position_kind", POSITION_KINDS),
            ("semantic_path", SEMANTIC_PATHS), ("norm_mode", NORM_MODES),
            ("padding_mode", ("zero", "reflect")),
        ]:
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.kernel_size not in (1, 3):
            raise ValueError(f"kernel_size must be 1 or 3, got {self.kernel_size}")

    @classmethod
    def baseline(cls, semantic_path="spade_conv", **kw):
        """Plain SPADE/CLADE: no noise, no position code."""
        return cls(noise_enabled=False, position_kind="none", semantic_path=semantic_path, **kw)

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def halves_semantic(self):
        return self.noise_enabled and self.combine_mode != "plus"

    def widths(self, channels):
        """(semantic width, noise width) for a layer with ``channels`` outputs."""
        if not self.noise_enabled:
            return channels, 0
        if self.combine_mode == "plus":
            return channels, channels
        if channels % 2:
            raise ValueError(f"channel count must be even for {self.combine_mode!r}, got {channels}")
        half = channels // 2
        return half, (1 if self.combine_mode == "one_channel" else half)


def combine_modulation(gamma_n, gamma_s, gamma_p, cfg):
    """Merge noise, semantic and position parts into one modulation map.

    ``gamma_n`` may be None (noise off) and ``gamma_p`` may be None
    (position off, treated as all ones).
    """
    mixed = gamma_s if gamma_p is None else gamma_s * gamma_p
    if gamma_n is None:
        return mixed
    mode = cfg.combine_mode if isinstance(cfg, VariantConfig) else cfg
    if mode == "plus":
        if gamma_n.shape != mixed.shape:
            raise ValueError(f"plus needs equal shapes, got {tuple(gamma_n.shape)} and {tuple(mixed.shape)}")
        return gamma_n + mixed
    if mode == "one_channel":
        if gamma_n.shape[1] != 1:
            raise ValueError(f"one_channel noise must have 1 channel, got {gamma_n.shape[1]}")
        gamma_n = gamma_n.expand(-1, mixed.shape[1], -1, -1)
    elif mode not in ("concat", "rand"):
        raise ValueError(f"unknown combine mode {mode!r}")
    if gamma_n.shape[1] != mixed.shape[1]:
        raise ValueError(
            f"concat halves must match: noise {gamma_n.shape[1]} vs semantic {mixed.shape[1]} channels"
        )
    if gamma_n.shape[0] != mixed.shape[0]:
        gamma_n, mixed = torch.broadcast_tensors(gamma_n, mixed)
    return torch.cat([gamma_n, mixed], dim=1)


class VasisNorm(nn.Module):
    """Conditional normalisation whose scale/shift are built from three parts.

    ``rng`` supplies the noise; passing ``None`` replaces the Gaussian draw
    by zeros. Gamma and beta use independent draws and independent banks.
    """

    def __init__(self, channels, label_nc, cfg, hidden=64, resolution=None, rng=None,
                 noise_scale_init=0.5):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        self.label_nc = label_nc
        sem_w, noise_w = cfg.widths(channels)
        if cfg.semantic_path == "spade_conv":
            self.semantic = SpadeModulation(label_nc, sem_w, hidden, cfg.kernel_size, cfg.padding_mode)
        else:
            self.semantic = CladeModulation(label_nc, sem_w)
        if cfg.noise_enabled:
            rows = 1 if cfg.combine_mode == "rand" else label_nc
            self.noise_gamma = SemanticNoise(rows, noise_w, noise_scale_init, 1.0)
            self.noise_beta = SemanticNoise(rows, noise_w, noise_scale_init, 0.0)
        if cfg.position_kind != "none":
            self.pos_gamma = PositionProjection(sem_w, 3, cfg.padding_mode, bias_init=1.0)
            self.pos_beta = PositionProjection(sem_w, 3, cfg.padding_mode, bias_init=1.0)
        if cfg.position_kind == "learnable":
            if resolution is None:
                raise ValueError("learnable position code needs the layer resolution")
            h, w = resolution
            rng = rng or RngStream(0, 0)
            self.code = nn.Parameter(rng.normal((1, 2, h, w)) * 0.02)

    def position_code(self, layout):
        h, w = layout.shape[-2:]
        kind = self.cfg.position_kind
        if kind == "absolute":
            return absolute_code(h, w, dtype=layout.dtype).data
        if kind == "relative":
            return relative_code(layout).data
        return resize_code(self.code, h, w)

    def modulation(self, layout, rng=None):
        labels = layout_to_labels(layout)
        if self.cfg.semantic_path == "clade_sample":
            sem = self.semantic(layout, labels)
        else:
            sem = self.semantic(layout)
        gamma_p = beta_p = None
        if self.cfg.position_kind != "none":
            code = self.position_code(layout)
            gamma_p, beta_p = self.pos_gamma(code), self.pos_beta(code)
        gamma_n = beta_n = None
        if self.cfg.noise_enabled:
            gamma_n = self.noise_gamma(layout, rng, labels)
            beta_n = self.noise_beta(layout, rng, labels)
        return ModulationPair(
            combine_modulation(gamma_n, sem.gamma, gamma_p, self.cfg),
            combine_modulation(beta_n, sem.beta, beta_p, self.cfg),
        )

    def forward(self, x, layout, rng=None):
        if layout.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"layout {tuple(layout.shape[-2:])} vs features {tuple(x.shape[-2:])}")
        stats = batch_stats(x, per_sample=self.cfg.norm_mode == "instance")
        return denormalize(x, stats, self.modulation(layout, rng))


def vasis_norm_forward(x, layout, params, cfg=None, rng=None):
    if cfg is not None and cfg != params.cfg:
        raise ValueError("cfg does not match the layer's configuration")
    return params(x, layout, rng)


class VasisResBlock(nn.Module):
    """Two norm-activation-conv stages with a residual connection.

    The skip path is the identity when channel counts agree, otherwise a
    norm followed by a bias-free 1x1 convolution.
    """

    def __init__(self, fin, fout, label_nc, cfg, hidden=64, resolution=None, rng=None):
        super().__init__()
        fmid = min(fin, fout)
        rng = rng or RngStream(0, 0)
        norm = lambda c: VasisNorm(c, label_nc, cfg, hidden, resolution, rng)  # noqa: E731
        self.learned_skip = fin != fout
        self.norm_0 = norm(fin)
        self.conv_0 = make_conv(fin, fmid, 3, cfg.padding_mode)
        self.norm_1 = norm(fmid)
        self.conv_1 = make_conv(fmid, fout, 3, cfg.padding_mode)
        if self.learned_skip:
            self.norm_s = norm(fin)
            self.conv_s = nn.Conv2d(fin, fout, 1, bias=False)

    def shortcut(self, x, layout, rng=None):
        if self.learned_skip:
            return self.conv_s(self.norm_s(x, layout, rng))
        return x

    def forward(self, x, layout, rng=None):
        dx = self.conv_0(F.leaky_relu(self.norm_0(x, layout, rng), 0.2))
        dx = self.conv_1(F.leaky_relu(self.norm_1(dx, layout, rng), 0.2))
        return self.shortcut(x, layout, rng) + dx


def vasis_resblock_forward(x, layout, block, cfg=None, rng=None):
    return block(x, layout, rng)
