import numpy as np
import torch

from vasis_lab.core import one_hot_encode


def layout_from(labels, n, dtype=torch.float64):
    labels = torch.as_tensor(np.asarray(labels))
    if labels.dim() == 2:
        labels = labels[None]
    return one_hot_encode(labels, n, dtype)
