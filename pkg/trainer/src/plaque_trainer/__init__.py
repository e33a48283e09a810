"""UNet / attention-UNet trainer over plaque patch sets."""

from .attention import export_attention_maps
from .config import ModelConfig, TrainConfig
from .errors import (
    ConfigInvalid,
    DataMissing,
    Divergence,
    NotAttentionModel,
    TrainerError,
)
from .gradcheck import GradientCheckReport, bce_dice_linearity_gap, gradient_check
from .losses import bce, bce_dice, dice_loss, focal, loss_fn
from .models import SegmentationUNet, build_model, parameter_count
from .train import EpochStats, TrainResult, evaluate_pool, load_checkpoint, train

__all__ = [
    "ConfigInvalid",
    "DataMissing",
    "Divergence",
    "EpochStats",
    "GradientCheckReport",
    "ModelConfig",
    "NotAttentionModel",
    "SegmentationUNet",
    "TrainConfig",
    "TrainResult",
    "TrainerError",
    "bce",
    "bce_dice",
    "bce_dice_linearity_gap",
    "build_model",
    "dice_loss",
    "evaluate_pool",
    "export_attention_maps",
    "focal",
    "gradient_check",
    "load_checkpoint",
    "loss_fn",
    "parameter_count",
    "train",
]

__version__ = "0.1.0"
