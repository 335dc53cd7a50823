"""Audio-to-motion VAE: dilated-conv encoder/decoder, flow prior, sync loss.

The encoder sees ground-truth landmarks plus the combined audio encoding and
emits a per-frame diagonal Gaussian; the decoder turns a latent sequence and
the audio encoding back into neutral landmark frames. The KL term is a
single-sample Monte Carlo estimate against the flow prior's density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .audio import AudioEncoder, AudioFeatureSequence, concat_encodings, encode_audio
from .core import (
    LANDMARK_DIM,
    DivergenceError,
    NonFiniteError,
    ShapeMismatchError,
    ValidationError,
)
from .dataio import module_state_tensors, save_checkpoint
from .engine import AdamOptimizer, AdamSettings, ParameterStore, adam_step
from .flow import FlowPrior
from .sync import SyncScorer, sync_loss, sync_score


class DilatedStack(nn.Module):
    """Length-preserving 1-D conv stack with growing dilation."""

    def __init__(self, in_dim: int, out_dim: int, width: int = 128, dilations=(1, 2, 4, 8)):
        super().__init__()
        layers = []
        prev = in_dim
        for d in dilations:
            layers.append(nn.Conv1d(prev, width, kernel_size=3, padding=d, dilation=d))
            prev = width
        self.convs = nn.ModuleList(layers)
        self.act = nn.GELU()
        self.head = nn.Conv1d(width, out_dim, kernel_size=1)

    def forward(self, x):
        # x: (T, F) -> (T, out_dim)
        h = x.t().unsqueeze(0)
        for conv in self.convs:
            h = self.act(conv(h))
        return self.head(h).squeeze(0).t()


class VaeEncoder(nn.Module):
    def __init__(self, cond_dim: int, latent_dim: int = 16, width: int = 128,
                 landmark_dim: int = LANDMARK_DIM):
        super().__init__()
        self.latent_dim = latent_dim
        self.stack = DilatedStack(landmark_dim + cond_dim, 2 * latent_dim, width)

    def forward(self, landmarks, cond):
        if landmarks.shape[0] != cond.shape[0]:
            raise ShapeMismatchError(
                f"landmark/conditioning lengths differ: {landmarks.shape[0]} vs {cond.shape[0]}")
        out = self.stack(torch.cat([landmarks, cond], dim=-1))
        mu, log_scale = out[:, :self.latent_dim], out[:, self.latent_dim:]
        return mu, torch.exp(log_scale)


class VaeDecoder(nn.Module):
    def __init__(self, cond_dim: int, latent_dim: int = 16, width: int = 128,
                 landmark_dim: int = LANDMARK_DIM):
        super().__init__()
        self.stack = DilatedStack(latent_dim + cond_dim, landmark_dim, width)

    def forward(self, z, cond):
        if z.shape[0] != cond.shape[0]:
            raise ShapeMismatchError(
                f"latent/conditioning lengths differ: {z.shape[0]} vs {cond.shape[0]}")
        return self.stack(torch.cat([z, cond], dim=-1))


class MotionVae(nn.Module):
    """Bundle of audio encoders, VAE encoder/decoder, flow prior, sync scorer."""

    def __init__(self, content_dim: int, pitch_dim: int, channels: int = 64,
                 latent_dim: int = 16, width: int = 128, flow_steps: int = 4,
                 sync_window: int = 5, landmark_dim: int = LANDMARK_DIM):
        super().__init__()
        self.audio_encoder = AudioEncoder(content_dim, pitch_dim, channels)
        cond_dim = 2 * channels
        self.encoder = VaeEncoder(cond_dim, latent_dim, width, landmark_dim)
        self.decoder = VaeDecoder(cond_dim, latent_dim, width, landmark_dim)
        self.prior = FlowPrior(latent_dim, flow_steps)
        self.scorer = SyncScorer(sync_window, content_dim, landmark_dim)
        self.hyper = {
            "content_dim": content_dim, "pitch_dim": pitch_dim, "channels": channels,
            "latent_dim": latent_dim, "width": width, "flow_steps": flow_steps,
            "sync_window": sync_window, "landmark_dim": landmark_dim,
        }

    def condition(self, features: AudioFeatureSequence):
        h, p = encode_audio(features, self.audio_encoder)
        return concat_encodings(h, p)

    @classmethod
    def from_hyper(cls, hyper: dict):
        return cls(**{k: int(v) for k, v in hyper.items()})


def gaussian_log_prob(x, mu, sigma):
    """Diagonal Gaussian log density, summed over the last axis."""
    var = sigma * sigma
    return (-0.5 * ((x - mu) ** 2) / var - torch.log(sigma)
            - 0.5 * math.log(2 * math.pi)).sum(dim=-1)


def kl_standard_normal(mu, sigma):
    """Closed-form KL(N(mu, sigma) || N(0, I)), summed over the last axis."""
    return 0.5 * (mu * mu + sigma * sigma - 1.0 - 2.0 * torch.log(sigma)).sum(dim=-1)


def monte_carlo_kl(mu, sigma, prior: FlowPrior, n_samples: int,
                   generator: torch.Generator | None = None) -> float:
    """MC estimate of KL(q || prior) with reparameterized samples from q."""
    import copy

    mu = torch.as_tensor(mu, dtype=torch.float64).reshape(1, -1)
    sigma = torch.as_tensor(sigma, dtype=torch.float64).reshape(1, -1)
    prior64 = copy.deepcopy(prior).double()
    total, chunk = 0.0, 20000
    done = 0
    with torch.no_grad():
        while done < n_samples:
            n = min(chunk, n_samples - done)
            eps = torch.randn(n, mu.shape[1], generator=generator, dtype=torch.float64)
            z = mu + sigma * eps
            lq = gaussian_log_prob(z, mu, sigma)
            lp = prior64.log_prob(z)
            total += float((lq - lp).sum())
            done += n
    return total / n_samples


def vae_loss(landmarks, recon, mu, sigma, z_sample, prior: FlowPrior,
             sync_scores=None, sync_labels=None, kl_weight: float = 1.0,
             sync_weight: float = 1.0):
    """Total objective and its term breakdown (terms sum to the total)."""
    recon_term = ((landmarks - recon) ** 2).sum(dim=-1).mean()
    log_q = gaussian_log_prob(z_sample, mu, sigma)
    log_p = prior.log_prob(z_sample)
    kl_term = (log_q - log_p).mean() * kl_weight
    if sync_scores is not None:
        sync_term = sync_loss(sync_scores, sync_labels) * sync_weight
    else:
        sync_term = torch.zeros((), dtype=recon_term.dtype)
    total = recon_term + kl_term + sync_term
    breakdown = {"recon": float(recon_term.detach()), "kl": float(kl_term.detach()),
                 "sync": float(sync_term.detach())}
    breakdown["total"] = breakdown["recon"] + breakdown["kl"] + breakdown["sync"]
    for name in ("recon", "kl", "sync"):
        if not math.isfinite(breakdown[name]):
            raise NonFiniteError(name)
    return total, breakdown


def _window_stack(arr: torch.Tensor, starts, window: int):
    return torch.stack([arr[s:s + window] for s in starts])


def _shifted_start(start: int, window: int, max_start: int, gen: torch.Generator) -> int:
    """Uniform start position at least `window` frames away from `start`."""
    left = max(start - window + 1, 0)
    right = max(max_start - (start + window) + 1, 0)
    if left + right == 0:
        raise ValidationError("no valid shifted window position")
    k = int(torch.randint(0, left + right, (1,), generator=gen))
    return k if k < left else start + window + (k - left)


@dataclass
class VaeTrainResult:
    model: MotionVae
    curves: dict
    checkpoint_path: object = None
    recon_at: dict = field(default_factory=dict)


def train_vae(landmarks: np.ndarray, features: AudioFeatureSequence, *,
              steps: int = 2000, lr: float = 5e-4, seed: int = 0,
              latent_dim: int = 16, channels: int = 64, width: int = 128,
              flow_steps: int = 4, sync_window: int = 5, sync_pairs: int = 16,
              kl_weight: float = 1.0, sync_weight: float = 1.0,
              out_dir=None, snapshot_every: int = 200,
              record_steps=(50, 2000)) -> VaeTrainResult:
    """Fit the VAE on one paired clip; emits per-term loss curves.

    Sync negatives use audio windows shifted by at least the window length.
    Aborts with the last good checkpoint if the loss goes non-finite.
    """
    if landmarks.shape[0] != len(features):
        raise ShapeMismatchError("landmarks and audio features disagree on length")
    t_frames = landmarks.shape[0]
    if t_frames < 3 * sync_window:
        raise ValidationError("clip too short for sync windows")

    torch.manual_seed(seed)
    model = MotionVae(features.content.shape[1], features.pitch.shape[1],
                      channels=channels, latent_dim=latent_dim, width=width,
                      flow_steps=flow_steps, sync_window=sync_window)
    store = ParameterStore.from_module(model)
    opt = AdamOptimizer(store, AdamSettings(lr=lr))
    gen = torch.Generator().manual_seed(seed + 1)

    lm = torch.as_tensor(landmarks, dtype=torch.float32)
    content = torch.as_tensor(features.content)
    curves = {"step": [], "recon": [], "kl": [], "sync": [], "total": [], "recon_mse": []}
    recon_at = {}
    last_good = None

    max_start = t_frames - sync_window
    for step in range(1, steps + 1):
        cond = model.condition(features)
        mu, sigma = model.encoder(lm, cond)
        eps = torch.randn(mu.shape, generator=gen)
        z = mu + sigma * eps
        recon = model.decoder(z, cond)

        starts = torch.randint(0, max_start + 1, (sync_pairs,), generator=gen).tolist()
        shifted = [_shifted_start(s, sync_window, max_start, gen) for s in starts]
        a_pos = _window_stack(content, starts, sync_window)
        a_neg = _window_stack(content, shifted, sync_window)
        l_gt = _window_stack(lm, starts, sync_window)
        l_gen = _window_stack(recon, starts, sync_window)
        scores = torch.cat([
            sync_score(model.scorer, a_pos, l_gt),
            sync_score(model.scorer, a_neg, l_gt),
            sync_score(model.scorer, a_pos, l_gen),
        ])
        labels = torch.cat([torch.ones(sync_pairs), torch.zeros(sync_pairs),
                            torch.ones(sync_pairs)])

        total, breakdown = vae_loss(lm, recon, mu, sigma, z, model.prior,
                                    scores, labels, kl_weight, sync_weight)
        if not math.isfinite(float(total)):
            raise DivergenceError(f"VAE loss non-finite at step {step}", last_good)
        total.backward()
        adam_step(store, opt)

        recon_mse = breakdown["recon"] / lm.shape[1]
        curves["step"].append(step)
        for key in ("recon", "kl", "sync", "total"):
            curves[key].append(breakdown[key])
        curves["recon_mse"].append(recon_mse)
        if step in record_steps:
            recon_at[step] = recon_mse
        if out_dir is not None and (step % snapshot_every == 0 or step == steps):
            last_good = save_vae_checkpoint(model, out_dir, step)

    path = save_vae_checkpoint(model, out_dir, steps) if out_dir is not None else None
    return VaeTrainResult(model=model, curves=curves, checkpoint_path=path, recon_at=recon_at)


def save_vae_checkpoint(model: MotionVae, out_dir, step: int):
    config = {"stage": "vae", **model.hyper}
    return save_checkpoint(module_state_tensors(model), out_dir, step=step, config=config)


def load_vae_checkpoint(checkpoint) -> MotionVae:
    from .dataio import load_module_state

    hyper = {k: v for k, v in checkpoint.config.items() if k != "stage"}
    model = MotionVae.from_hyper(hyper)
    load_module_state(model, checkpoint)
    model.eval()
    return model


def infer_motion(features: AudioFeatureSequence, model: MotionVae, seed: int = 0) -> np.ndarray:
    """Sample the prior, decode with the encoded audio; deterministic per seed."""
    was_training = model.training
    model.eval()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        cond = model.condition(features)
        u = torch.randn(len(features), model.prior.dim, generator=gen)
        z = model.prior.inverse(u)
        out = model.decoder(z, cond)
    if was_training:
        model.train()
    return out.numpy().astype(np.float32)
