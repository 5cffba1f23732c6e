"""Semantic noise and the three position codes (absolute, learnable, relative)."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import RngStream, layout_to_labels
from .modulation import ClassParamBank, make_conv

POSITION_KINDS = ("absolute", "learnable", "relative")


@dataclass
class PositionCode:
    kind: str
    data: torch.Tensor

    def __post_init__(self):
        if self.kind not in POSITION_KINDS:
            raise ValueError(f"unknown position code kind {self.kind!r}")
        if self.data.dim() != 4 or self.data.shape[1] != 2:
            raise ValueError(f"position code must be (B, 2, H, W), got {tuple(self.data.shape)}")


class SemanticNoise(nn.Module):
    """Class-conditioned Gaussian noise ``z * S(s, n1) + S(s, n2)``.

    ``rows=1`` gives a class-blind bank (the "rand" variant). ``channels=1``
    gives the one-channel variant; tiling to the target width happens in
    the combination step.
    """

    def __init__(self, rows, channels, scale_init=0.5, shift_init=0.0):
        super().__init__()
        self.n1 = ClassParamBank(rows, channels, scale_init)
        self.n2 = ClassParamBank(rows, channels, shift_init)

    @property
    def channels(self):
        return self.n1.table.shape[1]

    def forward(self, layout, rng, labels=None):
        return sample_semantic_noise(layout, self, rng, labels)


def sample_semantic_noise(layout, params, rng, labels=None):
    """Draw one noise map; ``rng=None`` uses z = 0 (deterministic switch)."""
    if params.n1.table.shape != params.n2.table.shape:
        raise ValueError("n1 and n2 banks must have equal shape")
    if labels is None and not params.n1.class_blind:
        labels = layout_to_labels(layout)
    scale = params.n1(layout, labels)
    shift = params.n2(layout, labels)
    if rng is None:
        return shift.expand(layout.shape[0], -1, -1, -1)
    b, _, h, w = layout.shape
    z = rng.normal((b, params.channels, h, w), dtype=scale.dtype)
    return z * scale + shift


def absolute_code(h, w, dtype=torch.float32):
    """Coordinate grid in [-1, 1]: channel 0 runs down rows, channel 1 across columns."""
    if h < 1 or w < 1:
        raise ValueError(f"h and w must be >= 1, got {h}x{w}")
    rows = torch.linspace(-1, 1, h, dtype=torch.float64) if h > 1 else torch.zeros(1, dtype=torch.float64)
    cols = torch.linspace(-1, 1, w, dtype=torch.float64) if w > 1 else torch.zeros(1, dtype=torch.float64)
    grid = torch.stack([rows[:, None].expand(h, w), cols[None, :].expand(h, w)])
    return PositionCode("absolute", grid.unsqueeze(0).to(dtype))


def relative_code(layout):
    """Offset of each pixel from its class centroid, normalised per axis.

    Centroids are per (sample, class), not per connected component. The
    offset along each axis is divided by the largest absolute offset of
    that class along the same axis, so values lie in [-1, 1]; axes with no
    spread (e.g. single-pixel classes) get 0. Arithmetic is done on integer
    numerators so translated regions get bit-identical codes.
    """
    b, n, h, w = layout.shape
    labels = layout_to_labels(layout).reshape(b, -1)
    rows = torch.arange(h, dtype=torch.float64).repeat_interleave(w).expand(b, -1)
    cols = torch.arange(w, dtype=torch.float64).repeat(h).expand(b, -1)
    counts = torch.zeros(b, n, dtype=torch.float64).scatter_add_(1, labels, torch.ones_like(rows))
    channels = []
    for coord in (rows, cols):
        sums = torch.zeros(b, n, dtype=torch.float64).scatter_add_(1, labels, coord)
        # n * (x - centroid), exact in float64 for any desk-scale image
        num = coord * counts.gather(1, labels) - sums.gather(1, labels)
        spread = torch.zeros(b, n, dtype=torch.float64).scatter_reduce_(
            1, labels, num.abs(), reduce="amax", include_self=True
        )
        denom = spread.gather(1, labels)
        channels.append(torch.where(denom > 0, num / denom.clamp(min=1), torch.zeros_like(num)))
    code = torch.stack(channels, 1).reshape(b, 2, h, w)
    return PositionCode("relative", code.to(layout.dtype))


def learnable_code_init(h, w, rng, std=0.02, dtype=torch.float32):
    """A trainable ``(1, 2, h, w)`` code drawn i.i.d. from N(0, std^2)."""
    if h < 1 or w < 1:
        raise ValueError(f"h and w must be >= 1, got {h}x{w}")
    if not isinstance(rng, RngStream):
        raise TypeError("rng must be an RngStream")
    data = nn.Parameter(rng.normal((1, 2, h, w), dtype=dtype) * std)
    return PositionCode("learnable", data)


class PositionProjection(nn.Module):
    """Convolution mapping a 2-channel code to ``out_channels``."""

    def __init__(self, out_channels, kernel_size=3, padding_mode="zero", bias_init=1.0):
        super().__init__()
        self.conv = make_conv(2, out_channels, kernel_size, padding_mode)
        with torch.no_grad():
            self.conv.bias.fill_(bias_init)

    def forward(self, code):
        return project_code(code, self)


def project_code(code, params):
    data = code.data if isinstance(code, PositionCode) else code
    conv = params.conv if isinstance(params, PositionProjection) else params
    if data.shape[1] != 2 or conv.in_channels != 2:
        raise ValueError(f"position code must have 2 channels, got {data.shape[1]}")
    return conv(data)


def monotonicity_check(code, axis):
    """True iff the axis's channel is monotone along every line parallel to that axis.

    ``axis="row"`` inspects channel 0 down each column; ``"col"`` inspects
    channel 1 along each row.
    """
    data = code.data if isinstance(code, PositionCode) else code
    if axis == "row":
        diff = data[:, 0].diff(dim=1)
    elif axis == "col":
        diff = data[:, 1].diff(dim=2)
    else:
        raise ValueError(f"axis must be 'row' or 'col', got {axis!r}")
    if diff.numel() == 0:
        return True
    line_dim = 1 if axis == "row" else 2
    increasing = (diff >= 0).all(dim=line_dim)
    decreasing = (diff <= 0).all(dim=line_dim)
    return bool((increasing | decreasing).all())


def resize_code(data, h, w):
    """Bilinear resize of a code tensor, used when a generator runs off its native size."""
    if data.shape[-2:] == (h, w):
        return data
    return F.interpolate(data, size=(h, w), mode="bilinear", align_corners=True)
