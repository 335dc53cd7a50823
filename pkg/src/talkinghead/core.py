"""Shared constants, label handling, and error types used across the pipeline."""

from __future__ import annotations

import numpy as np

# 68-point facial landmark convention, flattened xyz.
NUM_POINTS = 68
LANDMARK_DIM = NUM_POINTS * 3
MOUTH_INDICES = tuple(range(48, 68))

# Discrete emotion categories with stable integer codes (listed order).
EMOTIONS = ("angry", "disgust", "contempt", "fear", "happy", "neutral", "sad", "surprise")
EMOTION_CODES = {name: i for i, name in enumerate(EMOTIONS)}
NEUTRAL = "neutral"


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(PipelineError):
    """Bad input, config, or label; maps to CLI exit code 2."""


class UnknownEmotionError(ValidationError):
    def __init__(self, label):
        super().__init__(f"unknown emotion {label!r}; valid labels: {', '.join(EMOTIONS)}")


class ShapeMismatchError(ValidationError):
    pass


class MissingFileError(ValidationError):
    pass


class SchemaVersionError(ValidationError):
    pass


class CheckpointFormatError(ValidationError):
    pass


class CheckpointCompatError(ValidationError):
    """Checkpoints from incompatible configs combined in one pipeline."""


class NonFiniteError(PipelineError):
    """A NaN or Inf showed up; carries the stage where it was detected."""

    def __init__(self, stage, message=""):
        self.stage = stage
        super().__init__(f"non-finite value at stage {stage!r}" + (f": {message}" if message else ""))


class DivergenceError(PipelineError):
    """Training loss went non-finite; carries the last good checkpoint path."""

    def __init__(self, message, last_checkpoint=None):
        self.last_checkpoint = last_checkpoint
        super().__init__(message)


def emotion_code(label: str) -> int:
    try:
        return EMOTION_CODES[label]
    except KeyError:
        raise UnknownEmotionError(label) from None


def check_emotion(label: str) -> str:
    emotion_code(label)
    return label


def require_finite(array, stage: str):
    """Raise NonFiniteError naming `stage` if `array` has NaNs or Infs."""
    import torch

    if isinstance(array, torch.Tensor):
        ok = bool(torch.isfinite(array).all())
    else:
        ok = bool(np.isfinite(np.asarray(array)).all())
    if not ok:
        raise NonFiniteError(stage)
    return array
