"""Layout tensors, label maps and deterministic random streams.

Conventions used across the package:

* a *label map* is an integer tensor of shape ``(B, H, W)`` with entries in
  ``[0, N)``;
* a *semantic layout* is its one-hot form, a float tensor ``(B, N, H, W)``;
* a *feature tensor* is any finite float tensor ``(B, C, H, W)``.

Plain ``torch.Tensor`` objects are passed around; the ``check_*`` helpers
enforce the invariants at module boundaries.
"""
from __future__ import annotations

import numpy as np
import torch


class LayoutError(ValueError):
    """Invalid label map or semantic layout."""


def check_label_map(labels, num_classes=None):
    if labels.dim() != 3:
        raise LayoutError(f"label map must be (B, H, W), got shape {tuple(labels.shape)}")
    if labels.dtype.is_floating_point or labels.dtype == torch.bool:
        raise LayoutError(f"label map must be an integer tensor, got {labels.dtype}")
    if min(labels.shape) < 1:
        raise LayoutError(f"label map has an empty dimension: {tuple(labels.shape)}")
    if num_classes is not None:
        bad = (labels < 0) | (labels >= num_classes)
        if bad.any():
            b, h, w = (int(v) for v in bad.nonzero()[0])
            raise LayoutError(
                f"label {int(labels[b, h, w])} at (b={b}, h={h}, w={w}) "
                f"outside [0, {num_classes})"
            )
    return labels


def check_layout(layout):
    """Validate a one-hot layout and return its class count."""
    if layout.dim() != 4:
        raise LayoutError(f"layout must be (B, N, H, W), got shape {tuple(layout.shape)}")
    if min(layout.shape) < 1:
        raise LayoutError(f"layout has an empty dimension: {tuple(layout.shape)}")
    binary = (layout == 0) | (layout == 1)
    if not bool(binary.all()) or not bool((layout.sum(1) == 1).all()):
        raise LayoutError("layout is not a valid one-hot map (exactly one 1 per pixel)")
    return layout.shape[1]


def check_finite(x, name="tensor"):
    if not bool(torch.isfinite(x).all()):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def one_hot_encode(labels, num_classes, dtype=torch.float32):
    """(B, H, W) integer labels -> (B, N, H, W) one-hot layout."""
    labels = torch.as_tensor(labels)
    check_label_map(labels, num_classes)
    onehot = torch.nn.functional.one_hot(labels.long(), num_classes)
    return onehot.permute(0, 3, 1, 2).to(dtype).contiguous()


def layout_to_labels(layout):
    # weighted channel sum; exact for one-hot input and much faster than argmax on CPU
    idx = torch.arange(layout.shape[1], dtype=layout.dtype, device=layout.device)
    return torch.einsum("bnhw,n->bhw", layout, idx).round().long()


def downsample_layout(layout, target_h, target_w):
    """Nearest-neighbour resize with the floor rule ``src = floor(i * H / target)``.

    Interpolating one-hot maps would mix classes, so only index selection
    is allowed and upsampling is refused.
    """
    _, _, h, w = layout.shape
    if target_h < 1 or target_w < 1:
        raise LayoutError(f"target size must be >= 1, got {target_h}x{target_w}")
    if target_h > h or target_w > w:
        raise LayoutError(f"cannot upsample layout {h}x{w} to {target_h}x{target_w}")
    if (target_h, target_w) == (h, w):
        return layout
    rows = torch.arange(target_h) * h // target_h
    cols = torch.arange(target_w) * w // target_w
    return layout[:, :, rows][:, :, :, cols]


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's Philox-4x64 generator with the 128-bit key
    ``[seed, stream_id]``, so streams are reproducible across runs and
    platforms and distinct ids never overlap. A stream has a single owner;
    drawing from it concurrently is not supported.
    """

    MASK = (1 << 64) - 1

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & self.MASK
        self.stream_id = int(stream_id) & self.MASK
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, stream_id):
        """An independent stream sharing this seed."""
        return RngStream(self.seed, stream_id)

    def normal(self, shape, dtype=torch.float32):
        return torch.from_numpy(self._gen.standard_normal(shape)).to(dtype)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def torch_seed(self):
        """A 63-bit seed for torch-side initialisers, drawn from this stream."""
        return int(self._gen.integers(0, 2**63 - 1))

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state
