"""Boundary-enhanced query-based semantic segmentation on a from-scratch autodiff core."""

from .config import LossWeights, ModelConfig, RunConfig
from .model import SegModel
from .tensor import Tensor, backward, grad_check, no_grad

__all__ = ["LossWeights", "ModelConfig", "RunConfig", "SegModel", "Tensor", "backward", "grad_check", "no_grad"]
__version__ = "0.1.0"
