"""Audio/landmark window embedders scored by cosine similarity.

Trained from scratch with aligned windows as positives and temporally
shifted windows as negatives; the score feeds a cross-entropy loss after
the affine map s -> (s + 1) / 2.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import ShapeMismatchError, ValidationError

PROB_EPS = 1e-7


class WindowEmbedder(nn.Module):
    def __init__(self, window: int, feature_dim: int, hidden: int = 64, embed: int = 32):
        super().__init__()
        self.window = window
        self.feature_dim = feature_dim
        self.net = nn.Sequential(
            nn.Linear(window * feature_dim, hidden),
            nn.GELU(),
            nn.Linear(hidden, embed),
        )

    def forward(self, win):
        win = torch.as_tensor(win, dtype=self.net[0].weight.dtype)
        if win.ndim == 2:
            win = win.unsqueeze(0)
        if win.shape[-2] != self.window or win.shape[-1] != self.feature_dim:
            raise ShapeMismatchError(
                f"window must be ({self.window}, {self.feature_dim}), got {tuple(win.shape[-2:])}")
        return self.net(win.reshape(win.shape[0], -1))


class SyncScorer(nn.Module):
    def __init__(self, window: int, audio_dim: int, landmark_dim: int,
                 hidden: int = 64, embed: int = 32):
        super().__init__()
        self.window = window
        self.audio_net = WindowEmbedder(window, audio_dim, hidden, embed)
        self.landmark_net = WindowEmbedder(window, landmark_dim, hidden, embed)


def sync_score(scorer: SyncScorer, audio_window, landmark_window) -> torch.Tensor:
    """Cosine similarity of the two window embeddings, in [-1, 1]."""
    ea = scorer.audio_net(audio_window)
    el = scorer.landmark_net(landmark_window)
    na = ea.norm(dim=-1)
    nl = el.norm(dim=-1)
    if bool((na < 1e-12).any()) or bool((nl < 1e-12).any()):
        raise ValidationError("degenerate zero-norm embedding in sync score")
    return (ea * el).sum(dim=-1) / (na * nl)


def sync_loss(score: torch.Tensor, label) -> torch.Tensor:
    """Cross-entropy on p = (s + 1) / 2, probabilities clamped away from 0/1."""
    score = torch.as_tensor(score)
    label = torch.as_tensor(label, dtype=score.dtype)
    bad = (label != 0) & (label != 1)
    if bool(bad.any()):
        raise ValidationError(f"sync labels must be 0 or 1, got {label[bad].tolist()}")
    p = ((score + 1.0) / 2.0).clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(label * torch.log(p) + (1.0 - label) * torch.log(1.0 - p)).mean()
