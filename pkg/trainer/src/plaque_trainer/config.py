"""Model and training configuration records.

Network depth is not a free parameter: 128 px patches train a 3-level
encoder/decoder and 256 px patches a 4-level one, so ``depth`` is derived
from ``patch_size`` and the pair is validated as a unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigInvalid

ARCHITECTURES = ("unet", "attention_unet")
PATCH_SIZES = (128, 256)
DEPTH_FOR_PATCH = {128: 3, 256: 4}

LOSS_KINDS = ("bce", "dice_loss", "bce_dice", "focal")
OPTIMIZERS = ("adadelta", "sgd", "adam", "rmsprop")

DEFAULT_LOSS_PARAMS = {
    "bce_weight": 0.5,
    "focal_gamma": 2.0,
    "focal_alpha": 0.25,
    "eps": 1e-7,
}


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the segmentation network to build."""

    arch: str = "unet"
    patch_size: int = 128
    base_channels: int = 64
    dropout_p: float = 0.5
    depth: int = field(init=False)

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigInvalid("arch", f"must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.patch_size not in PATCH_SIZES:
            raise ConfigInvalid(
                "patch_size", f"must be one of {PATCH_SIZES}, got {self.patch_size!r}"
            )
        if not isinstance(self.base_channels, int) or self.base_channels < 1:
            raise ConfigInvalid("base_channels", "must be a positive integer")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigInvalid("dropout_p", "must lie in [0, 1)")
        object.__setattr__(self, "depth", DEPTH_FOR_PATCH[self.patch_size])


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule for one fold run."""

    loss_kind: str = "bce_dice"
    bce_weight: float = 0.5
    optimizer: str = "adadelta"
    rho: float = 0.9
    lr: float = 1.0
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    early_stopping_patience: int = 15
    batch_size: int = 4
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigInvalid("loss_kind", f"must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if not 0.0 <= self.bce_weight <= 1.0:
            raise ConfigInvalid("bce_weight", "must lie in [0, 1]")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigInvalid(
                "optimizer", f"must be one of {OPTIMIZERS}, got {self.optimizer!r}"
            )
        if not 0.0 < self.rho < 1.0:
            raise ConfigInvalid("rho", "must lie in (0, 1)")
        if self.lr < 0.0:
            raise ConfigInvalid("lr", "must be non-negative")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigInvalid("plateau_factor", "must lie in (0, 1)")
        if self.plateau_patience < 0:
            raise ConfigInvalid("plateau_patience", "must be >= 0")
        if self.early_stopping_patience < 1:
            raise ConfigInvalid("early_stopping_patience", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size", "must be >= 1")
        if self.max_epochs < 1:
            raise ConfigInvalid("max_epochs", "must be >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigInvalid("seed", "must be a non-negative integer")

    def loss_params(self) -> dict:
        params = dict(DEFAULT_LOSS_PARAMS)
        params["bce_weight"] = self.bce_weight
        return params
