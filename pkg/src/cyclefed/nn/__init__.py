from .model import (
    ARCHITECTURES,
    DivergenceError,
    EvalResult,
    ModelSpec,
    ModelState,
    ShapeMismatchError,
    UnknownArchitectureError,
    backward,
    build_model,
    evaluate,
    forward,
    get_spec,
    load_checkpoint,
    save_checkpoint,
    softmax,
)
from .optim import OptimizerState, sgd_epochs, sgd_step

__all__ = [
    "ARCHITECTURES",
    "DivergenceError",
    "EvalResult",
    "ModelSpec",
    "ModelState",
    "ShapeMismatchError",
    "UnknownArchitectureError",
    "backward",
    "build_model",
    "evaluate",
    "forward",
    "get_spec",
    "load_checkpoint",
    "save_checkpoint",
    "softmax",
    "OptimizerState",
    "sgd_epochs",
    "sgd_step",
]
