from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import CheckResult, grad_check, primitive_suite
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor

__all__ = [
    "AdamState",
    "CheckResult",
    "Checkpoint",
    "Tape",
    "Tensor",
    "adam_step",
    "grad_check",
    "load_checkpoint",
    "primitive_suite",
    "save_checkpoint",
]
