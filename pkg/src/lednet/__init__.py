"""Lightweight encoder-decoder segmentation network on a minimal
numpy-backed reverse-mode autodiff engine."""

from .model import DILATION_SCHEDULE, LEDNet, build_lednet, compare_modules, count_params
from .tensor import GraphTape, Tensor, finite_difference_check

__all__ = [
    "DILATION_SCHEDULE",
    "GraphTape",
    "LEDNet",
    "Tensor",
    "build_lednet",
    "compare_modules",
    "count_params",
    "finite_difference_check",
]
