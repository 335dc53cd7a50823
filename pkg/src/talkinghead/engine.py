"""Parameter registry, Adam optimization, and numerical gradient verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .core import PipelineError, ValidationError


class MissingGradientError(PipelineError):
    pass


class NonDeterministicForwardError(PipelineError):
    pass


class ParameterStore:
    """Named trainable tensors with a monotone step counter."""

    def __init__(self, named_params):
        self.params = dict(named_params)
        if not self.params:
            raise ValidationError("empty parameter store")
        self.step_count = 0

    @classmethod
    def from_module(cls, module: torch.nn.Module, prefix: str = ""):
        named = {prefix + name: p for name, p in module.named_parameters()}
        return cls(named)

    def names(self):
        return list(self.params)

    def tensors(self):
        return list(self.params.values())

    def missing_gradients(self):
        return [name for name, p in self.params.items() if p.grad is None]

    def clear_gradients(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class AdamSettings:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.eps <= 0:
            raise ValidationError("Adam eps must be > 0")


class AdamOptimizer:
    """torch.optim.Adam behind the store contract (explicit missing-grad check)."""

    def __init__(self, store: ParameterStore, settings: AdamSettings | None = None):
        self.store = store
        self.settings = settings or AdamSettings()
        self.opt = torch.optim.Adam(store.tensors(), lr=self.settings.lr,
                                    betas=(self.settings.beta1, self.settings.beta2),
                                    eps=self.settings.eps)

    def moments(self, name: str):
        p = self.store.params[name]
        state = self.opt.state.get(p, {})
        return state.get("exp_avg"), state.get("exp_avg_sq")


def adam_step(store: ParameterStore, opt: AdamOptimizer):
    """One Adam update; requires every registered parameter to carry a gradient."""
    missing = store.missing_gradients()
    if missing:
        raise MissingGradientError(
            f"missing gradient for parameter(s): {', '.join(sorted(missing))}")
    opt.opt.step()
    store.clear_gradients()
    store.step_count += 1
    return store


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    checked: int
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(loss_fn, params, tolerance: float = 1e-4, n_coords: int = 120,
               base_step: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    `loss_fn` must be a deterministic closure returning a scalar (dropout off,
    RNG fixed); `params` maps names to the tensors it differentiates through.
    Perturbation step is `base_step` scaled by each coordinate's magnitude.
    A random subset of at least `n_coords` coordinates is probed.
    """
    if hasattr(params, "params"):
        params = params.params
    params = dict(params)

    with torch.no_grad():
        a = float(loss_fn())
        b = float(loss_fn())
    if a != b:
        raise NonDeterministicForwardError(
            f"two forward evaluations differ: {a!r} vs {b!r}")

    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None
                       else torch.zeros_like(p)) for name, p in params.items()}

    flat = [(name, i) for name, p in params.items() for i in range(p.numel())]
    rng = torch.Generator().manual_seed(seed)
    if len(flat) > n_coords:
        order = torch.randperm(len(flat), generator=rng)[:n_coords].tolist()
        picks = [flat[i] for i in order]
    else:
        picks = flat

    max_rel, worst = 0.0, ("", -1)
    per_param: dict = {}
    with torch.no_grad():
        for name, idx in picks:
            p = params[name]
            view = p.data.view(-1)
            orig = view[idx].item()
            h = base_step * max(abs(orig), 1.0)
            view[idx] = orig + h
            plus = float(loss_fn())
            view[idx] = orig - h
            minus = float(loss_fn())
            view[idx] = orig
            numeric = (plus - minus) / (2.0 * h)
            exact = analytic[name].reshape(-1)[idx].item()
            denom = max(abs(exact), abs(numeric), 1e-8)
            rel = abs(exact - numeric) / denom
            entry = per_param.setdefault(name, {"max_rel": 0.0, "checked": 0})
            entry["checked"] += 1
            entry["max_rel"] = max(entry["max_rel"], rel)
            if rel > max_rel:
                max_rel, worst = rel, (name, idx)

    for p in params.values():
        p.grad = None
    return GradCheckReport(max_rel_error=max_rel, worst_param=worst[0], worst_index=worst[1],
                           checked=len(picks), tolerance=tolerance, per_param=per_param)
