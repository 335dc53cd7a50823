"""Tri-plane multiresolution hash encoding and the conditioned radiance field.

The 3-D feature volume is factorized into three 2-D grids (XY, YZ, XZ).
Each grid has L resolution levels; a level either indexes its table
directly (when the level grid fits) or through a spatial hash with fixed
large primes. All three planes and levels live in one flat parameter so a
query is four corner gathers regardless of L.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .core import LANDMARK_DIM, ShapeMismatchError, ValidationError

log = logging.getLogger(__name__)

HASH_PRIMES = (73856093, 2654435761)
PLANE_NAMES = ("xy", "yz", "xz")
_PLANE_AXES = ((0, 1), (1, 2), (0, 2))


def level_resolutions(levels: int, base: int, finest: int) -> list:
    """Geometric resolution ladder from `base` to `finest` inclusive."""
    if levels == 1:
        return [base]
    growth = (finest / base) ** (1.0 / (levels - 1))
    return [int(np.floor(base * growth ** i)) for i in range(levels)]


class TriPlaneEncoder(nn.Module):
    def __init__(self, levels: int = 14, features_per_level: int = 2,
                 log2_table: int = 14, base_resolution: int = 16,
                 finest_resolution: int = 512):
        super().__init__()
        self.levels = levels
        self.features_per_level = features_per_level
        self.table_size = 2 ** log2_table
        self.resolutions = level_resolutions(levels, base_resolution, finest_resolution)
        # a level is direct-indexed when its full corner grid fits the table
        direct = [(r + 1) ** 2 <= self.table_size for r in self.resolutions]

        self.table = nn.Parameter(
            torch.empty(3 * levels * self.table_size, features_per_level).uniform_(-1e-4, 1e-4))
        self.register_buffer("res", torch.tensor(self.resolutions, dtype=torch.long))
        self.register_buffer("direct", torch.tensor(direct))
        self.register_buffer("offsets",
                             (torch.arange(3 * levels) * self.table_size).view(3, levels, 1))

    @property
    def output_dim(self) -> int:
        return 3 * self.levels * self.features_per_level

    def _corner_index(self, xi, yi):
        """Table rows for integer corners; xi/yi are (3, L, N)."""
        stride = (self.res + 1).view(1, -1, 1)
        direct_idx = yi * stride + xi
        hashed_idx = ((xi * HASH_PRIMES[0]) ^ (yi * HASH_PRIMES[1])) % self.table_size
        return torch.where(self.direct.view(1, -1, 1), direct_idx, hashed_idx) + self.offsets

    def _gather(self, idx, n):
        return self.table.index_select(0, idx.reshape(-1)).view(
            3, self.levels, n, self.features_per_level)

    def _encode_planes(self, ab):
        """ab: (3, N, 2) in [-1, 1] -> (3, N, levels * features)."""
        n = ab.shape[1]
        if bool((ab.abs() > 1.0).any()):
            log.warning("plane coordinates outside [-1, 1]; clamping to the domain")
            ab = ab.clamp(-1.0, 1.0)
        g = (ab + 1.0) * 0.5
        g = g.unsqueeze(1) * self.res.view(1, -1, 1, 1).to(g.dtype)   # (3, L, N, 2)
        g0 = g.floor().long().clamp_(min=0)
        g0 = torch.minimum(g0, (self.res - 1).view(1, -1, 1, 1))
        w = g - g0
        x0, y0 = g0[..., 0], g0[..., 1]
        x1, y1 = x0 + 1, y0 + 1
        wx, wy = w[..., 0:1], w[..., 1:2]
        f = (self._gather(self._corner_index(x0, y0), n) * (1 - wx) * (1 - wy)
             + self._gather(self._corner_index(x1, y0), n) * wx * (1 - wy)
             + self._gather(self._corner_index(x0, y1), n) * (1 - wx) * wy
             + self._gather(self._corner_index(x1, y1), n) * wx * wy)
        return f.permute(0, 2, 1, 3).reshape(3, n, self.levels * self.features_per_level)

    def encode_plane(self, plane: int, ab) -> torch.Tensor:
        """One plane's concatenated level features for (a, b) queries."""
        if plane not in (0, 1, 2):
            raise ValidationError(f"plane index must be 0, 1, or 2, got {plane}")
        ab = torch.atleast_2d(torch.as_tensor(ab, dtype=self.table.dtype))
        full = torch.zeros(3, ab.shape[0], 2, dtype=ab.dtype)
        full[plane] = ab
        return self._encode_planes(full)[plane]

    def forward(self, x) -> torch.Tensor:
        """x: (N, 3) in [-1, 1]^3 -> (N, 3 * levels * features), order XY, YZ, XZ."""
        x = torch.atleast_2d(torch.as_tensor(x, dtype=self.table.dtype))
        if x.shape[-1] != 3:
            raise ShapeMismatchError(f"positions must be (N, 3), got {tuple(x.shape)}")
        ab = torch.stack([x[:, axes] for axes in _PLANE_AXES], dim=0)
        feats = self._encode_planes(ab)
        return feats.permute(1, 0, 2).reshape(x.shape[0], self.output_dim)


class LandmarkAttention(nn.Module):
    """Convolutions over the point axis emit one softmax weight per landmark."""

    def __init__(self, channels: int = 32, landmark_dim: int = LANDMARK_DIM):
        super().__init__()
        if landmark_dim % 3 != 0:
            raise ValidationError("landmark dim must be divisible by 3")
        self.points = landmark_dim // 3
        self.conv1 = nn.Conv1d(3, channels, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, kernel_size=3, padding=1)
        self.conv3 = nn.Conv1d(channels, 1, kernel_size=3, padding=1)
        self.act = nn.GELU()

    def forward(self, landmarks):
        lm = torch.atleast_2d(torch.as_tensor(landmarks, dtype=self.conv1.weight.dtype))
        if not torch.isfinite(lm).all():
            raise ValidationError("landmark attention input contains NaN or Inf")
        n = lm.shape[0]
        pts = lm.reshape(n, self.points, 3).transpose(1, 2)   # (N, 3, P)
        h = self.act(self.conv1(pts))
        h = self.act(self.conv2(h))
        logits = self.conv3(h).squeeze(1)                     # (N, P)
        weights = torch.softmax(logits, dim=-1)
        feature = (weights.unsqueeze(-1) * pts.transpose(1, 2)).reshape(n, -1)
        return feature, weights


def direction_encoding(d: torch.Tensor, freqs: int = 4) -> torch.Tensor:
    """Sinusoidal encoding of view directions with `freqs` octaves."""
    scales = (2.0 ** torch.arange(freqs, dtype=d.dtype)) * torch.pi
    ang = d.unsqueeze(-1) * scales                            # (N, 3, F)
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1).reshape(d.shape[0], -1)


class FieldNetwork(nn.Module):
    """Density from tri-plane features plus condition; color adds the view direction."""

    def __init__(self, feature_dim: int, cond_dim: int, width: int = 64,
                 geo_features: int = 15, dir_freqs: int = 4):
        super().__init__()
        self.dir_freqs = dir_freqs
        self.cond_proj = nn.Linear(cond_dim, width)
        self.geo1 = nn.Linear(feature_dim, width)
        self.geo2 = nn.Linear(width, width)
        self.geo_out = nn.Linear(width, 1 + geo_features)
        self.color1 = nn.Linear(geo_features + 6 * dir_freqs, width)
        self.color2 = nn.Linear(width, 3)

    def project_condition(self, cond) -> torch.Tensor:
        return self.cond_proj(cond)

    def density(self, features, cond_vec):
        h = torch.relu(self.geo1(features) + cond_vec)
        h = torch.relu(self.geo2(h))
        out = self.geo_out(h)
        sigma = torch.nn.functional.softplus(out[..., 0])
        return sigma, out[..., 1:]

    def color(self, geo_features, directions):
        enc = direction_encoding(directions, self.dir_freqs)
        h = torch.relu(self.color1(torch.cat([geo_features, enc], dim=-1)))
        return torch.sigmoid(self.color2(h))


@dataclass
class FieldSample:
    """One query of the implicit field."""

    position: np.ndarray    # 3-vector in [-1, 1]^3
    direction: np.ndarray   # unit 3-vector
    landmarks: np.ndarray   # (204,) emotional landmark condition
    blendshapes: np.ndarray  # (D_b,)

    def validate(self):
        p = np.asarray(self.position, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if p.shape != (3,) or d.shape != (3,):
            raise ShapeMismatchError("position and direction must be 3-vectors")
        if np.any(np.abs(p) > 1.0):
            raise ValidationError(f"position outside the unit cube: {p.tolist()}")
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValidationError(f"direction not unit length: |d| = {np.linalg.norm(d)}")
        return self


class RadianceModel(nn.Module):
    """Tri-plane encoder + landmark attention + implicit field, one bundle."""

    def __init__(self, levels: int = 14, features_per_level: int = 2, log2_table: int = 14,
                 base_resolution: int = 16, finest_resolution: int = 512,
                 width: int = 64, geo_features: int = 15, dir_freqs: int = 4,
                 landmark_dim: int = LANDMARK_DIM, blendshape_dim: int = 8,
                 attention_channels: int = 32):
        super().__init__()
        self.encoder = TriPlaneEncoder(levels, features_per_level, log2_table,
                                       base_resolution, finest_resolution)
        self.attention = LandmarkAttention(attention_channels, landmark_dim)
        self.field = FieldNetwork(self.encoder.output_dim, landmark_dim + blendshape_dim,
                                  width, geo_features, dir_freqs)
        self.landmark_dim = landmark_dim
        self.blendshape_dim = blendshape_dim
        self.hyper = {
            "levels": levels, "features_per_level": features_per_level,
            "log2_table": log2_table, "base_resolution": base_resolution,
            "finest_resolution": finest_resolution, "width": width,
            "geo_features": geo_features, "dir_freqs": dir_freqs,
            "landmark_dim": landmark_dim, "blendshape_dim": blendshape_dim,
            "attention_channels": attention_channels,
        }

    def encode_condition(self, landmarks, blendshapes):
        """Per-frame condition projection; returns (vector, attention weights)."""
        lm = torch.atleast_2d(torch.as_tensor(landmarks, dtype=torch.float32))
        bs = torch.atleast_2d(torch.as_tensor(blendshapes, dtype=torch.float32))
        if lm.shape[-1] != self.landmark_dim:
            raise ShapeMismatchError(
                f"landmark dim {lm.shape[-1]}, model expects {self.landmark_dim}")
        if bs.shape[-1] != self.blendshape_dim:
            raise ShapeMismatchError(
                f"blendshape dim {bs.shape[-1]}, model expects {self.blendshape_dim}")
        feature, weights = self.attention(lm)
        cond = self.field.project_condition(torch.cat([feature, bs], dim=-1))
        return cond, weights

    def density_color(self, positions, directions, cond_vec):
        """Batched field evaluation given a precomputed condition vector."""
        features = self.encoder(positions)
        sigma, geo = self.field.density(features, cond_vec)
        rgb = self.field.color(geo, directions)
        return rgb, sigma

    @classmethod
    def from_hyper(cls, hyper: dict):
        return cls(**{k: int(v) for k, v in hyper.items()})


def field_eval(model: RadianceModel, sample: FieldSample):
    """Evaluate one validated sample; returns (rgb (3,), sigma scalar)."""
    sample.validate()
    cond, _ = model.encode_condition(sample.landmarks, sample.blendshapes)
    x = torch.as_tensor(sample.position, dtype=torch.float32).reshape(1, 3)
    d = torch.as_tensor(sample.direction, dtype=torch.float32).reshape(1, 3)
    rgb, sigma = model.density_color(x, d, cond)
    if not (torch.isfinite(rgb).all() and torch.isfinite(sigma).all()):
        raise ValidationError("non-finite field output")
    return rgb[0], sigma[0]
