"""Universal adversarial perturbations against CLIP-style dual encoders."""

from ._core import (
    DigestMismatch,
    InvariantViolation,
    IoError,
    Perturbation,
    UnknownAttacker,
    ValidationError,
    XTransferError,
    ZooIndex,
    __version__,
    generate,
    linf_bound_f32,
    non_targeted_asr,
    ucb_scores,
)
from . import zoo

__all__ = [
    "DigestMismatch",
    "InvariantViolation",
    "IoError",
    "Perturbation",
    "UnknownAttacker",
    "ValidationError",
    "XTransferError",
    "ZooIndex",
    "__version__",
    "generate",
    "linf_bound_f32",
    "non_targeted_asr",
    "ucb_scores",
    "zoo",
]
