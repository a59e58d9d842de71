"""Complex-valued spatial features with a learnable frequency-domain coding module, in numpy."""
from .autograd import ComplexTensor, Parameter, Tensor, backward, gradcheck, precision
from .models import ModelConfig, build, count_layers, count_params, preset

__all__ = [
    "Tensor",
    "Parameter",
    "ComplexTensor",
    "backward",
    "gradcheck",
    "precision",
    "ModelConfig",
    "build",
    "preset",
    "count_params",
    "count_layers",
]
__version__ = "0.1.0"
