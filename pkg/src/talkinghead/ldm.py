"""Emotion-conditioned landmark deformation.

A window of neutral landmark frames is treated as a token sequence; each
token is the 204-dim landmark concatenated with a 16-dim learned emotion
embedding. A feed-forward backbone, two residual blocks, and a residual
multi-head self-attention block produce a per-token displacement, scaled
by a user-facing magnitude at application time (training uses magnitude 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .core import (
    LANDMARK_DIM,
    DivergenceError,
    NonFiniteError,
    ShapeMismatchError,
    ValidationError,
    check_emotion,
    emotion_code,
)
from .core import EMOTIONS, NEUTRAL
from .dataio import module_state_tensors, save_checkpoint
from .engine import AdamOptimizer, AdamSettings, ParameterStore, adam_step

EMBED_DIM = 16


def _finite(x, stage):
    if not torch.isfinite(x).all():
        raise NonFiniteError(stage)
    return x


class ResidualBlock(nn.Module):
    """h -> ReLU(BN(FC(ReLU(BN(FC(h))))) + h)."""

    def __init__(self, width: int):
        super().__init__()
        self.fc1 = nn.Linear(width, width)
        self.bn1 = nn.BatchNorm1d(width)
        self.fc2 = nn.Linear(width, width)
        self.bn2 = nn.BatchNorm1d(width)

    def forward(self, h):
        f = self.bn2(self.fc2(torch.relu(self.bn1(self.fc1(h)))))
        return torch.relu(f + h)


class MultiHeadSelfAttention(nn.Module):
    """Self-attention over window tokens; exposes the per-head weights."""

    def __init__(self, width: int, heads: int = 4):
        super().__init__()
        if width % heads != 0:
            raise ValidationError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.dk = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, h):
        # h: (N, B, H)
        n, b, width = h.shape
        qkv = self.qkv(h).reshape(n, b, 3, self.heads, self.dk).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]              # (N, heads, B, dk)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.dk)
        attn = torch.softmax(logits, dim=-1)          # rows sum to 1
        mixed = (attn @ v).transpose(1, 2).reshape(n, b, width)
        return self.out(mixed), attn


class LandmarkDeformer(nn.Module):
    def __init__(self, hidden: int = 256, heads: int = 4, dropout: float = 0.1,
                 landmark_dim: int = LANDMARK_DIM, embed_dim: int = EMBED_DIM,
                 num_emotions: int = len(EMOTIONS)):
        super().__init__()
        self.landmark_dim = landmark_dim
        self.embedding = nn.Embedding(num_emotions, embed_dim)
        self.backbone_fc = nn.Linear(landmark_dim + embed_dim, hidden)
        self.backbone_bn = nn.BatchNorm1d(hidden)
        self.res1 = ResidualBlock(hidden)
        self.res2 = ResidualBlock(hidden)
        self.attention = MultiHeadSelfAttention(hidden, heads)
        self.drop1 = nn.Dropout(dropout)
        self.ln1 = nn.LayerNorm(hidden)
        self.ffn1 = nn.Linear(hidden, hidden)
        self.ffn2 = nn.Linear(hidden, hidden)
        self.drop2 = nn.Dropout(dropout)
        self.ln2 = nn.LayerNorm(hidden)
        self.head = nn.Linear(hidden, landmark_dim)
        self.hyper = {"hidden": hidden, "heads": heads,
                      "landmark_dim": landmark_dim, "embed_dim": embed_dim}

    def embed_emotion(self, codes) -> torch.Tensor:
        codes = torch.as_tensor(codes, dtype=torch.long)
        if codes.numel() and (codes.min() < 0 or codes.max() >= self.embedding.num_embeddings):
            raise ValidationError(
                f"emotion codes must be in [0, {self.embedding.num_embeddings}), got "
                f"{sorted(set(codes.tolist()) - set(range(self.embedding.num_embeddings)))}")
        return self.embedding(codes)

    def forward(self, landmarks, codes, train_mode: bool | None = None,
                return_attention: bool = False):
        """(N, B, 204) windows + per-window emotion codes -> displacement."""
        if train_mode is not None:
            self.train(train_mode)
        lm = torch.as_tensor(landmarks, dtype=torch.float32)
        squeeze = lm.ndim == 2
        if squeeze:
            lm = lm.unsqueeze(0)
        if lm.shape[-1] != self.landmark_dim:
            raise ShapeMismatchError(
                f"landmark dim {lm.shape[-1]}, model expects {self.landmark_dim}")
        n, b, _ = lm.shape
        codes = torch.as_tensor(codes, dtype=torch.long).reshape(-1)
        if codes.shape[0] != n:
            raise ShapeMismatchError(f"{codes.shape[0]} emotion codes for {n} windows")

        emb = self.embed_emotion(codes)                       # (N, 16)
        x = torch.cat([lm, emb.unsqueeze(1).expand(n, b, emb.shape[-1])], dim=-1)
        h = torch.relu(self.backbone_bn(self.backbone_fc(x.reshape(n * b, -1))))
        _finite(h, "backbone")
        h = self.res2(self.res1(h))
        _finite(h, "residual blocks")
        h = h.reshape(n, b, -1)

        z_att, attn = self.attention(h)
        _finite(z_att, "attention")
        z = self.ln1(self.drop1(z_att) + h)
        h_final = self.ln2(self.drop2(self.ffn2(torch.relu(self.ffn1(z)))) + h)
        _finite(h_final, "ffn")
        delta = self.head(h_final)
        _finite(delta, "output")
        if squeeze:
            delta = delta.squeeze(0)
            attn = attn.squeeze(0)
        return (delta, attn) if return_attention else delta


def apply_deformation(landmarks, delta, magnitude: float):
    """landmarks + magnitude * delta, exactly linear in the magnitude."""
    if magnitude < 0:
        raise ValidationError(f"deformation magnitude must be >= 0, got {magnitude}")
    lm = np.asarray(landmarks, dtype=np.float32)
    d = np.asarray(delta, dtype=np.float32)
    if lm.shape != d.shape:
        raise ShapeMismatchError(f"landmark shape {lm.shape} vs displacement shape {d.shape}")
    if magnitude == 0.0:
        return lm.copy()
    return lm + np.float32(magnitude) * d


def ldm_loss(pred, target) -> torch.Tensor:
    """Mean squared error over all coordinates."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"shape {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


@dataclass
class PairDataset:
    """Windows of neutral landmarks and their noisy emotional counterparts."""

    neutral: np.ndarray       # (N, B, 204)
    emotional: np.ndarray     # (N, B, 204)
    codes: np.ndarray         # (N,)
    oracle: np.ndarray        # (N, B, 204) clean displacement, for evaluation

    def __len__(self):
        return self.neutral.shape[0]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PairDataset(self.neutral[idx], self.emotional[idx],
                           self.codes[idx], self.oracle[idx])


def build_toy_pairs(*, clips_per_emotion: int = 3, frames: int = 48, window: int = 8,
                    noise_scale: float = 1e-3, seed: int = 0, settings=None) -> PairDataset:
    """Construct emotional/neutral window pairs from the synthetic generator."""
    from . import synth

    settings = settings or synth.DEFAULT_SETTINGS
    fields = synth.emotion_fields(settings)
    rng = np.random.default_rng(seed + 9000)
    neutral_w, emotional_w, codes, oracle_w = [], [], [], []
    k = 0
    for emotion in EMOTIONS:
        for _ in range(clips_per_emotion):
            clip = synth.generate_clip(seed + k, emotion, frames=frames, resolution=32,
                                       settings=settings)
            k += 1
            neutral = clip.landmarks - fields[emotion][None, :]
            disp = np.broadcast_to(fields[emotion], clip.landmarks.shape)
            noisy = neutral + disp + rng.normal(0.0, noise_scale, clip.landmarks.shape)
            for s in range(0, frames - window + 1, window):
                neutral_w.append(neutral[s:s + window])
                emotional_w.append(noisy[s:s + window].astype(np.float32))
                oracle_w.append(disp[s:s + window])
                codes.append(emotion_code(emotion))
    return PairDataset(np.stack(neutral_w).astype(np.float32),
                       np.stack(emotional_w),
                       np.asarray(codes, dtype=np.int64),
                       np.stack(oracle_w).astype(np.float32))


def build_pairs_from_dataset(manifest, window: int = 8, noise_scale: float = 1e-3,
                             seed: int = 0, settings=None) -> PairDataset:
    """Pairs from a synthetic dataset directory, using the generator's oracle fields."""
    from . import synth

    settings = settings or synth.DEFAULT_SETTINGS
    fields = synth.emotion_fields(settings)
    rng = np.random.default_rng(seed + 9000)
    neutral_w, emotional_w, codes, oracle_w = [], [], [], []
    for handle in manifest.clips:
        clip = handle.load(with_frames=False)
        f = fields[clip.emotion]
        neutral = clip.landmarks - f[None, :]
        disp = np.broadcast_to(f, clip.landmarks.shape)
        noisy = neutral + disp + rng.normal(0.0, noise_scale, clip.landmarks.shape)
        t = clip.landmarks.shape[0]
        for s in range(0, t - window + 1, window):
            neutral_w.append(neutral[s:s + window])
            emotional_w.append(noisy[s:s + window].astype(np.float32))
            oracle_w.append(disp[s:s + window])
            codes.append(emotion_code(clip.emotion))
    if not neutral_w:
        raise ValidationError("dataset yields no training windows")
    return PairDataset(np.stack(neutral_w).astype(np.float32),
                       np.stack(emotional_w),
                       np.asarray(codes, dtype=np.int64),
                       np.stack(oracle_w).astype(np.float32))


@dataclass
class LdmTrainResult:
    model: LandmarkDeformer
    curves: dict
    checkpoint_path: object = None


def train_ldm(pairs: PairDataset, *, steps: int = 3000, lr: float = 5e-4,
              batch: int = 16, hidden: int = 256, seed: int = 0,
              out_dir=None, snapshot_every: int = 500) -> LdmTrainResult:
    """Minimize the displacement MSE with magnitude fixed to 1 during training."""
    if len(pairs) < batch:
        raise ValidationError(f"need at least {batch} windows, got {len(pairs)}")
    torch.manual_seed(seed)
    model = LandmarkDeformer(hidden=hidden, landmark_dim=pairs.neutral.shape[-1])
    store = ParameterStore.from_module(model)
    opt = AdamOptimizer(store, AdamSettings(lr=lr))
    gen = torch.Generator().manual_seed(seed + 1)

    neutral = torch.as_tensor(pairs.neutral)
    emotional = torch.as_tensor(pairs.emotional)
    codes = torch.as_tensor(pairs.codes)
    curves = {"step": [], "loss": []}
    last_good = None

    model.train()
    for step in range(1, steps + 1):
        idx = torch.randint(0, len(pairs), (batch,), generator=gen)
        delta = model(neutral[idx], codes[idx])
        pred = neutral[idx] + delta  # training magnitude 1
        loss = ldm_loss(pred, emotional[idx])
        if not math.isfinite(float(loss)):
            raise DivergenceError(f"LDM loss non-finite at step {step}", last_good)
        loss.backward()
        adam_step(store, opt)
        curves["step"].append(step)
        curves["loss"].append(float(loss))
        if out_dir is not None and (step % snapshot_every == 0 or step == steps):
            last_good = save_ldm_checkpoint(model, out_dir, step)

    model.eval()
    path = save_ldm_checkpoint(model, out_dir, steps) if out_dir is not None else None
    return LdmTrainResult(model=model, curves=curves, checkpoint_path=path)


def displacement_error(model: LandmarkDeformer, pairs: PairDataset) -> dict:
    """Per-frame displacement error against the clean oracle fields."""
    model.eval()
    with torch.no_grad():
        delta = model(torch.as_tensor(pairs.neutral), torch.as_tensor(pairs.codes))
    delta = delta.numpy()
    err = np.linalg.norm(delta - pairs.oracle, axis=-1)       # (N, B)
    oracle_norm = np.linalg.norm(pairs.oracle, axis=-1)
    pred_norm = np.linalg.norm(delta, axis=-1)
    neutral_mask = pairs.codes == emotion_code(NEUTRAL)
    out = {
        "mean_error": float(err.mean()),
        "mean_oracle_norm": float(oracle_norm[~neutral_mask].mean()) if (~neutral_mask).any() else 0.0,
        "neutral_pred_norm": float(pred_norm[neutral_mask].mean()) if neutral_mask.any() else 0.0,
    }
    return out


def save_ldm_checkpoint(model: LandmarkDeformer, out_dir, step: int):
    config = {"stage": "ldm", **model.hyper}
    return save_checkpoint(module_state_tensors(model), out_dir, step=step, config=config)


def load_ldm_checkpoint(checkpoint) -> LandmarkDeformer:
    from .dataio import load_module_state

    hyper = {k: int(v) for k, v in checkpoint.config.items() if k != "stage"}
    model = LandmarkDeformer(**hyper)
    load_module_state(model, checkpoint)
    model.eval()
    return model


def deform_sequence(model: LandmarkDeformer, landmarks: np.ndarray, emotion: str,
                    magnitude: float, window: int = 8) -> np.ndarray:
    """Apply the deformer to a full sequence in non-overlapping windows."""
    check_emotion(emotion)
    model.eval()
    t = landmarks.shape[0]
    code = emotion_code(emotion)
    out = np.empty_like(landmarks, dtype=np.float32)
    with torch.no_grad():
        for s in range(0, t, window):
            chunk = landmarks[s:min(s + window, t)]
            delta = model(torch.as_tensor(chunk, dtype=torch.float32).unsqueeze(0),
                          torch.tensor([code])).squeeze(0).numpy()
            out[s:s + chunk.shape[0]] = apply_deformation(chunk, delta, magnitude)
    return out
