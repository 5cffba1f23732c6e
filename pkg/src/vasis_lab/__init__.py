"""Variation-aware semantic image synthesis at desk scale.

Conditional denormalisation layers (SPADE-style convolutional and
CLADE-style lookup paths), semantic noise and position codes, a small
generator/discriminator pair, diagnostics for intra-class variation and
class-level mode collapse, and desk-scale metrics.
"""
from .core import LayoutError, RngStream, one_hot_encode
from .vasis import VariantConfig, VasisNorm

__version__ = "0.1.0"
__all__ = ["LayoutError", "RngStream", "VariantConfig", "VasisNorm", "one_hot_encode", "__version__"]
