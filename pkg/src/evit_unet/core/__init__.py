from .tensor import Tape, Tensor, backward, count_runtime_macs, no_grad
from .gradcheck import GradcheckReport, gradcheck
from . import ops, container

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "count_runtime_macs",
    "no_grad",
    "GradcheckReport",
    "gradcheck",
    "ops",
    "container",
]
