"""numpy-backed tensors, taped reverse-mode gradients, and the op set."""

from .tensor import Tape, Tensor, as_tensor, backward
from . import ops

__all__ = ["Tape", "Tensor", "as_tensor", "backward", "ops"]
