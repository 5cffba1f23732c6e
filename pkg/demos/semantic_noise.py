"""Semantic noise: each class gets its own learnable Gaussian.

Draws gamma noise for a three-class layout many times and compares the
empirical per-class mean and std with the banks they come from.
"""
import torch

from vasis_lab.core import RngStream, one_hot_encode
from vasis_lab.noise_position import SemanticNoise

n, c, draws = 3, 2, 50_000
sn = SemanticNoise(n, c).double()
with torch.no_grad():
    sn.n1.table.copy_(torch.tensor([[0.1, 0.2], [0.5, 1.0], [2.0, 0.0]], dtype=torch.float64))
    sn.n2.table.copy_(torch.tensor([[1.0, -1.0], [0.0, 0.5], [3.0, 2.0]], dtype=torch.float64))
    layout = one_hot_encode(torch.arange(n).reshape(1, 1, n), n, torch.float64).expand(draws, -1, -1, -1)
    out = sn(layout, RngStream(0, 2))[:, :, 0, :]

for k in range(n):
    print(f"class {k}: mean {out[:, :, k].mean(0).numpy().round(3)} (shift {sn.n2.table[k].detach().numpy()}), "
          f"std {out[:, :, k].std(0).numpy().round(3)} (|scale| {sn.n1.table[k].detach().abs().numpy()})")
