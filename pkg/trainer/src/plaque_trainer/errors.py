"""Exception hierarchy for the trainer package."""

from __future__ import annotations


class TrainerError(Exception):
    """Base class for all trainer failures."""


class ConfigInvalid(TrainerError):
    """A configuration field is missing, malformed, or out of range."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class DataMissing(TrainerError):
    """A manifest, fold plan, patch file, or split pool is absent or empty."""


class Divergence(TrainerError):
    """Training produced a non-finite validation loss."""


class NotAttentionModel(TrainerError):
    """An attention-map operation was applied to a model without gates."""
