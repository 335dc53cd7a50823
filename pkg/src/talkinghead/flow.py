"""Invertible flow prior: actnorm, LU-parameterized mixing, affine coupling.

Forward maps a latent vector to the base normal; `log_prob` scores latents
as log N(forward(z); 0, I) plus the accumulated log-determinant. Sampling
goes the other way through `inverse`. All three step types start as the
identity so an untrained prior is exactly the standard normal.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .core import NonFiniteError, ValidationError


class ActNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.log_scale = nn.Parameter(torch.zeros(dim))
        self.shift = nn.Parameter(torch.zeros(dim))

    def forward(self, z):
        log_scale = self.log_scale.to(z.dtype)
        u = (z + self.shift.to(z.dtype)) * torch.exp(log_scale)
        return u, log_scale.sum().expand(z.shape[0])

    def inverse(self, u):
        return u * torch.exp(-self.log_scale.to(u.dtype)) - self.shift.to(u.dtype)


class LuMixing(nn.Module):
    """Invertible linear map W = L U with unit-lower L and diagonal-scaled U."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.lower = nn.Parameter(torch.zeros(dim, dim))
        self.upper = nn.Parameter(torch.zeros(dim, dim))
        self.log_diag = nn.Parameter(torch.zeros(dim))
        mask = torch.tril(torch.ones(dim, dim), diagonal=-1)
        self.register_buffer("lmask", mask)
        self.register_buffer("umask", mask.t())
        self.register_buffer("eye", torch.eye(dim))

    def _factors(self, dtype):
        l = self.lower.to(dtype) * self.lmask.to(dtype) + self.eye.to(dtype)
        u = self.upper.to(dtype) * self.umask.to(dtype) + torch.diag(torch.exp(self.log_diag.to(dtype)))
        return l, u

    def forward(self, z):
        l, u = self._factors(z.dtype)
        out = z @ (l @ u).t()
        return out, self.log_diag.to(z.dtype).sum().expand(z.shape[0])

    def inverse(self, out):
        l, u = self._factors(out.dtype)
        y = torch.linalg.solve_triangular(l, out.t(), upper=False)
        z = torch.linalg.solve_triangular(u, y, upper=True)
        return z.t()


class AffineCoupling(nn.Module):
    """Half the dims transform the other half; scale bounded via tanh."""

    SCALE_CAP = 2.0

    def __init__(self, dim: int, hidden: int = 64, flip: bool = False):
        super().__init__()
        if dim < 2:
            raise ValidationError("coupling needs dim >= 2")
        self.d1 = dim // 2
        self.d2 = dim - self.d1
        self.flip = flip
        self.net = nn.Sequential(
            nn.Linear(self.d1, hidden),
            nn.GELU(),
            nn.Linear(hidden, 2 * self.d2),
        )
        # zero-init the head so the step starts as the identity
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def _split(self, z):
        if self.flip:
            return z[:, self.d2:], z[:, :self.d2]
        return z[:, :self.d1], z[:, self.d1:]

    def _join(self, a, b):
        if self.flip:
            return torch.cat([b, a], dim=1)
        return torch.cat([a, b], dim=1)

    def _scale_shift(self, a):
        weight_dtype = self.net[0].weight.dtype
        raw = self.net(a.to(weight_dtype)).to(a.dtype)
        log_s = self.SCALE_CAP * torch.tanh(raw[:, :self.d2] / self.SCALE_CAP)
        return log_s, raw[:, self.d2:]

    def forward(self, z):
        a, b = self._split(z)
        log_s, t = self._scale_shift(a)
        u = self._join(a, b * torch.exp(log_s) + t)
        return u, log_s.sum(dim=1)

    def inverse(self, u):
        a, b = self._split(u)
        log_s, t = self._scale_shift(a)
        return self._join(a, (b - t) * torch.exp(-log_s))


class FlowPrior(nn.Module):
    """K steps of actnorm -> mixing -> coupling over Z-dim vectors."""

    def __init__(self, dim: int, steps: int = 4, hidden: int = 64):
        super().__init__()
        self.dim = dim
        layers = []
        for k in range(steps):
            layers += [ActNorm(dim), LuMixing(dim), AffineCoupling(dim, hidden, flip=k % 2 == 1)]
        self.layers = nn.ModuleList(layers)

    def forward(self, z):
        """z -> (u, log_det); rejects non-finite intermediates with the step index.

        Math runs in float64 internally (the latent is tiny) so the
        round-trip contract holds at any parameter state; outputs come
        back in the caller's dtype.
        """
        z = torch.atleast_2d(z)
        if not torch.isfinite(z).all():
            raise NonFiniteError("flow input")
        in_dtype = z.dtype
        u = z.to(torch.float64)
        log_det = torch.zeros(u.shape[0], dtype=torch.float64, device=u.device)
        for i, layer in enumerate(self.layers):
            u, ld = layer(u)
            if not torch.isfinite(u).all():
                raise NonFiniteError(f"flow step {i}")
            log_det = log_det + ld
        return u.to(in_dtype), log_det.to(in_dtype)

    def inverse(self, u):
        u = torch.atleast_2d(u)
        if not torch.isfinite(u).all():
            raise NonFiniteError("flow inverse input")
        in_dtype = u.dtype
        z = u.to(torch.float64)
        for i in reversed(range(len(self.layers))):
            z = self.layers[i].inverse(z)
            if not torch.isfinite(z).all():
                raise NonFiniteError(f"flow step {i}")
        return z.to(in_dtype)

    def log_prob(self, z):
        z = torch.atleast_2d(z)
        in_dtype = z.dtype
        u, log_det = self.forward(z.to(torch.float64))
        base = -0.5 * (u * u).sum(dim=1) - 0.5 * self.dim * math.log(2 * math.pi)
        return (base + log_det).to(in_dtype)

    def sample(self, n: int, generator: torch.Generator | None = None):
        u = torch.randn(n, self.dim, generator=generator)
        with torch.no_grad():
            return self.inverse(u)
