"""Audio feature encoders: per-stream conv -> batch norm -> GeLU -> conv."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import ShapeMismatchError, ValidationError


@dataclass
class AudioFeatureSequence:
    """Per-video-frame content and pitch feature matrices."""

    content: np.ndarray  # (T, D_a)
    pitch: np.ndarray    # (T, D_p)

    def __post_init__(self):
        self.content = np.asarray(self.content, dtype=np.float32)
        self.pitch = np.asarray(self.pitch, dtype=np.float32)
        if self.content.ndim != 2 or self.pitch.ndim != 2:
            raise ShapeMismatchError("audio features must be 2-D (frames x dim)")
        if self.content.shape[0] != self.pitch.shape[0]:
            raise ShapeMismatchError(
                f"content has {self.content.shape[0]} frames, pitch {self.pitch.shape[0]}")
        if not np.isfinite(self.content).all() or not np.isfinite(self.pitch).all():
            raise ValidationError("audio features contain NaN or Inf")

    def __len__(self):
        return self.content.shape[0]


class StreamEncoder(nn.Module):
    """conv(k=3) -> BN -> GeLU -> conv(k=3), temporal length preserved."""

    def __init__(self, in_dim: int, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(in_dim, channels, kernel_size=3, padding=1)
        self.bn = nn.BatchNorm1d(channels)
        self.act = nn.GELU()
        self.conv2 = nn.Conv1d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x):
        # x: (T, D) -> (T, C)
        h = x.t().unsqueeze(0)
        h = self.conv2(self.act(self.bn(self.conv1(h))))
        return h.squeeze(0).t()


class AudioEncoder(nn.Module):
    def __init__(self, content_dim: int, pitch_dim: int, channels: int = 64):
        super().__init__()
        self.channels = channels
        self.content = StreamEncoder(content_dim, channels)
        self.pitch = StreamEncoder(pitch_dim, channels)


def encode_audio(features: AudioFeatureSequence, encoder: AudioEncoder):
    """Encode both streams; returns (h, p) of shape (T, C) each."""
    if len(features) < 1:
        raise ValidationError("need at least one frame of audio features")
    content = torch.as_tensor(features.content)
    pitch = torch.as_tensor(features.pitch)
    if not torch.isfinite(content).all() or not torch.isfinite(pitch).all():
        raise ValidationError("audio features contain NaN or Inf")
    h = encoder.content(content)
    p = encoder.pitch(pitch)
    return h, p


def concat_encodings(h: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """Channel-wise concatenation, content first."""
    if h.shape[0] != p.shape[0]:
        raise ShapeMismatchError(
            f"encoding lengths differ: {h.shape[0]} vs {p.shape[0]}")
    return torch.cat([h, p], dim=-1)


def split_encodings(combined: torch.Tensor, channels: int):
    return combined[:, :channels], combined[:, channels:]
