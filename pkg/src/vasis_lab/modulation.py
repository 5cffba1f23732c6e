"""Conditional denormalisation with SPADE-style and CLADE-style parameter paths."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import check_finite, layout_to_labels

PADDING_MODES = {"zero": "zeros", "reflect": "reflect"}


@dataclass
class BatchStats:
    """Per-channel mean and standard deviation.

    ``mu``/``sigma`` have shape ``(C,)`` for batch statistics or ``(B, C)``
    for per-sample (instance) statistics.
    """

    mu: torch.Tensor
    sigma: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise ValueError(f"mu {tuple(self.mu.shape)} vs sigma {tuple(self.sigma.shape)}")

    def broadcast(self):
        if self.mu.dim() == 1:
            return self.mu.view(1, -1, 1, 1), self.sigma.view(1, -1, 1, 1)
        return self.mu[:, :, None, None], self.sigma[:, :, None, None]


@dataclass
class ModulationPair:
    gamma: torch.Tensor
    beta: torch.Tensor

    def __post_init__(self):
        if self.gamma.shape != self.beta.shape:
            raise ValueError(
                f"gamma {tuple(self.gamma.shape)} and beta {tuple(self.beta.shape)} differ"
            )


def batch_stats(x, eps=1e-5, per_sample=False):
    """Biased per-channel statistics over (B, H, W), or (H, W) if ``per_sample``.

    ``sigma = sqrt(var + eps)``, so it is strictly positive.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    dims = (2, 3) if per_sample else (0, 2, 3)
    mu = x.mean(dim=dims, keepdim=True)
    # explicit form; Tensor.var over (0, 2, 3) is several times slower on CPU
    var = (x - mu).pow(2).mean(dim=dims)
    # any NaN/Inf in x propagates into var, so checking it covers the input
    check_finite(var, "feature tensor statistics")
    return BatchStats(mu.squeeze(-1).squeeze(-1).reshape(var.shape), torch.sqrt(var + eps))


def denormalize(x, stats, mods):
    """``gamma * (x - mu) / sigma + beta`` applied elementwise."""
    if mods.gamma.shape[1:] != x.shape[1:] or mods.gamma.shape[0] not in (1, x.shape[0]):
        raise ValueError(
            f"modulation shape {tuple(mods.gamma.shape)} does not match features {tuple(x.shape)}"
        )
    mu, sigma = stats.broadcast()
    if mu.shape[1] != x.shape[1]:
        raise ValueError(f"stats have {mu.shape[1]} channels, features have {x.shape[1]}")
    return mods.gamma * ((x - mu) / sigma) + mods.beta


def make_conv(cin, cout, kernel_size, padding_mode="zero", bias=True):
    """Same-size convolution with the named padding (``zero`` or ``reflect``)."""
    if padding_mode not in PADDING_MODES:
        raise ValueError(f"padding_mode must be one of {sorted(PADDING_MODES)}, got {padding_mode!r}")
    return nn.Conv2d(
        cin, cout, kernel_size, padding=kernel_size // 2,
        padding_mode=PADDING_MODES[padding_mode], bias=bias,
    )


class SpadeModulation(nn.Module):
    """SPADE parameter path: ``gamma = F2(relu(F1(s)))``, ``beta = F3(relu(F1(s)))``.

    F2's bias starts at ``gamma_bias_init`` so that the initial scale is
    close to one; the denormalisation itself uses gamma as-is.
    """

    def __init__(self, label_nc, out_channels, hidden=64, kernel_size=3,
                 padding_mode="zero", gamma_bias_init=1.0):
        super().__init__()
        if kernel_size not in (1, 3):
            raise ValueError(f"kernel_size must be 1 or 3, got {kernel_size}")
        self.label_nc = label_nc
        self.kernel_size = kernel_size
        self.padding_mode = padding_mode
        self.shared = make_conv(label_nc, hidden, kernel_size, padding_mode)
        self.gamma = make_conv(hidden, out_channels, kernel_size, padding_mode)
        self.beta = make_conv(hidden, out_channels, kernel_size, padding_mode)
        with torch.no_grad():
            self.gamma.bias.fill_(gamma_bias_init)

    def forward(self, layout):
        if layout.shape[1] != self.label_nc:
            raise ValueError(f"layout has {layout.shape[1]} classes, path expects {self.label_nc}")
        actv = F.relu(self.shared(layout))
        return ModulationPair(self.gamma(actv), self.beta(actv))


def spade_modulation(layout, params):
    return params(layout)


def guided_sample(layout, table, class_blind=False, labels=None):
    """Per-pixel row lookup: ``out[b, :, h, w] = table[label(b, h, w)]``.

    With ``class_blind`` the table must have a single row, shared by every
    class.
    """
    n = layout.shape[1]
    if class_blind:
        if table.shape[0] != 1:
            raise ValueError(f"class-blind table must have 1 row, got {table.shape[0]}")
        out = table.view(1, -1, 1, 1).expand(layout.shape[0], -1, *layout.shape[2:])
        return out
    if table.shape[0] != n:
        raise ValueError(f"table has {table.shape[0]} rows, layout has {n} classes")
    if n <= 64:
        # one-hot contraction: each output is 1 * row + exact zeros, so no mixing
        return torch.einsum("bnhw,nc->bchw", layout, table)
    if labels is None:
        labels = layout_to_labels(layout)
    return F.embedding(labels, table).permute(0, 3, 1, 2)


class ClassParamBank(nn.Module):
    """A learnable ``(rows, channels)`` table sampled by :func:`guided_sample`."""

    def __init__(self, rows, channels, init=0.0, init_std=0.0):
        super().__init__()
        self.table = nn.Parameter(torch.full((rows, channels), float(init)))
        if init_std > 0:
            with torch.no_grad():
                self.table.normal_(float(init), init_std)

    @property
    def class_blind(self):
        return self.table.shape[0] == 1

    def forward(self, layout, labels=None):
        return guided_sample(layout, self.table, self.class_blind, labels)


class CladeModulation(nn.Module):
    """CLADE parameter path: gamma and beta are per-class lookups."""

    def __init__(self, label_nc, out_channels, gamma_init=1.0, beta_init=0.0, init_std=0.1):
        super().__init__()
        self.label_nc = label_nc
        self.gamma = ClassParamBank(label_nc, out_channels, gamma_init, init_std)
        self.beta = ClassParamBank(label_nc, out_channels, beta_init, init_std)

    def forward(self, layout, labels=None):
        if labels is None:
            labels = layout_to_labels(layout)
        return ModulationPair(self.gamma(layout, labels), self.beta(layout, labels))
