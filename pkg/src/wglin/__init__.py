"""Multi-view classifier with wavelet-mediated global-local interaction."""

from .model import ModelConfig, Wglin, VARIANTS, assemble_input, fuse_logits
from .tensor import Tensor, no_grad
from .training import RunConfig, build_model, evaluate_model, train_model

__all__ = [
    "ModelConfig", "Wglin", "VARIANTS", "assemble_input", "fuse_logits",
    "Tensor", "no_grad", "RunConfig", "build_model", "evaluate_model",
    "train_model",
]
