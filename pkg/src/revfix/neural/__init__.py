from .model import (
    Batch,
    DecoderState,
    EncoderOutput,
    ModelConfig,
    PointerGenerator,
    load_checkpoint,
    make_batch,
    save_checkpoint,
)
from .gradcheck import GradCheckResult, gradient_check
from .training import TrainingConfig, TrainResult, train

__all__ = [
    "Batch",
    "DecoderState",
    "EncoderOutput",
    "ModelConfig",
    "PointerGenerator",
    "load_checkpoint",
    "make_batch",
    "save_checkpoint",
    "GradCheckResult",
    "gradient_check",
    "TrainingConfig",
    "TrainResult",
    "train",
]
