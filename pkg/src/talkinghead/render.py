"""Differentiable volume rendering and the two-stage radiance-field trainer.

Quadrature: each ray segment [t_near, t_far] is split into equal bins, one
stratified sample per bin, with the bin width as the integration step. That
makes the homogeneous-medium case exact and keeps the compositing identity
sum(w) + T_final = 1 telescoping exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import (
    DivergenceError,
    ShapeMismatchError,
    ValidationError,
)
from .dataio import HeadPose, module_state_tensors, save_checkpoint
from .engine import AdamOptimizer, AdamSettings, ParameterStore, adam_step
from .triplane import RadianceModel

DEFAULT_BACKGROUND = (0.12, 0.12, 0.15)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float
    samples: int

    def validate(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValidationError(f"ray direction not unit length: |d| = {np.linalg.norm(d)}")
        if not self.near < self.far:
            raise ValidationError(f"ray needs near < far, got [{self.near}, {self.far}]")
        if self.samples < 2:
            raise ValidationError(f"ray needs at least 2 samples, got {self.samples}")
        return self


def composite(sigmas: torch.Tensor, colors: torch.Tensor, deltas: torch.Tensor,
              background) -> tuple:
    """Alpha-composite samples along rays.

    sigmas: (R, S), colors: (R, S, 3), deltas: (R, S) or (R, 1).
    Returns (rgb (R, 3), transmittance tail (R,)).
    """
    alphas = 1.0 - torch.exp(-sigmas * deltas)
    trans = torch.cumprod(1.0 - alphas, dim=-1)
    shifted = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=-1)
    weights = alphas * shifted
    t_final = trans[:, -1]
    bg = torch.as_tensor(background, dtype=colors.dtype)
    rgb = (weights.unsqueeze(-1) * colors).sum(dim=1) + t_final.unsqueeze(-1) * bg
    return rgb, t_final


def stratified_ts(near: torch.Tensor, far: torch.Tensor, samples: int,
                  jitter: torch.Tensor) -> tuple:
    """Sample positions and per-ray bin width; jitter in [0, 1) per (ray, sample)."""
    delta = (far - near) / samples                        # (R,)
    idx = torch.arange(samples, dtype=near.dtype)
    ts = near.unsqueeze(-1) + (idx + jitter) * delta.unsqueeze(-1)
    return ts, delta.unsqueeze(-1)


def ray_box_intersection(origins: torch.Tensor, dirs: torch.Tensor,
                         bound: float = 1.0, eps: float = 1e-9) -> tuple:
    """Entry/exit distances against the [-bound, bound]^3 cube; hit mask."""
    inv = 1.0 / torch.where(dirs.abs() < eps, torch.full_like(dirs, eps), dirs)
    t1 = (-bound - origins) * inv
    t2 = (bound - origins) * inv
    t_near = torch.minimum(t1, t2).amax(dim=-1).clamp_min(0.0)
    t_far = torch.maximum(t1, t2).amin(dim=-1)
    hit = t_far > t_near
    return t_near, t_far, hit


def rays_from_pose(rotation, translation, intrinsics: dict, pixel_grid) -> tuple:
    """World-space origins and unit directions for pixel centers.

    pixel_grid: (N, 2) integer (row, col) indices.
    """
    rot = torch.as_tensor(np.asarray(rotation), dtype=torch.float32)
    trans = torch.as_tensor(np.asarray(translation), dtype=torch.float32)
    px = torch.as_tensor(np.asarray(pixel_grid), dtype=torch.float32)
    u = px[:, 1] + 0.5
    v = px[:, 0] + 0.5
    x = (u - intrinsics["cx"]) / intrinsics["fx"]
    y = (v - intrinsics["cy"]) / intrinsics["fy"]
    cam_dirs = torch.stack([x, y, torch.ones_like(x)], dim=-1)
    world_dirs = cam_dirs @ rot  # R^T applied row-wise
    world_dirs = world_dirs / world_dirs.norm(dim=-1, keepdim=True)
    center = -(rot.t() @ trans)
    origins = center.expand_as(world_dirs)
    return origins, world_dirs


def render_rays(model: RadianceModel, origins, dirs, near, far, samples: int,
                cond_vec, background, jitter) -> tuple:
    """Render a batch of rays sharing one condition vector."""
    ts, delta = stratified_ts(near, far, samples, jitter)      # (R, S), (R, 1)
    pos = origins.unsqueeze(1) + ts.unsqueeze(-1) * dirs.unsqueeze(1)
    flat_pos = pos.reshape(-1, 3)
    flat_dir = dirs.unsqueeze(1).expand_as(pos).reshape(-1, 3)
    rgb, sigma = model.density_color(flat_pos, flat_dir, cond_vec)
    r = origins.shape[0]
    return composite(sigma.view(r, samples), rgb.view(r, samples, 3), delta, background)


def render_ray(model: RadianceModel, ray: Ray, landmarks, blendshapes,
               background=DEFAULT_BACKGROUND, seed: int = 0) -> tuple:
    """Single-ray convenience wrapper; returns (rgb (3,), transmittance tail)."""
    ray.validate()
    gen = torch.Generator().manual_seed(seed)
    jitter = torch.rand(1, ray.samples, generator=gen)
    cond, _ = model.encode_condition(landmarks, blendshapes)
    o = torch.as_tensor(np.asarray(ray.origin), dtype=torch.float32).reshape(1, 3)
    d = torch.as_tensor(np.asarray(ray.direction), dtype=torch.float32).reshape(1, 3)
    rgb, t_final = render_rays(model, o, d, torch.tensor([float(ray.near)]),
                               torch.tensor([float(ray.far)]), ray.samples,
                               cond, background, jitter)
    return rgb[0], t_final[0]


def render_frame(model: RadianceModel, rotation, translation, intrinsics: dict,
                 landmarks, blendshapes, resolution: int, samples: int = 24,
                 background=DEFAULT_BACKGROUND, seed: int = 0,
                 chunk: int = 4096) -> np.ndarray:
    """Render one full frame; deterministic for a fixed stratification seed."""
    HeadPose(np.asarray(rotation), np.asarray(translation)).validate("render pose")
    h = w = resolution
    rows, cols = np.mgrid[0:h, 0:w]
    pixels = np.stack([rows.reshape(-1), cols.reshape(-1)], axis=-1)
    origins, dirs = rays_from_pose(rotation, translation, intrinsics, pixels)
    near, far, hit = ray_box_intersection(origins, dirs)

    gen = torch.Generator().manual_seed(seed)
    jitter = torch.rand(h * w, samples, generator=gen)

    img = torch.empty(h * w, 3)
    img[:] = torch.as_tensor(background, dtype=torch.float32)
    with torch.no_grad():
        cond, _ = model.encode_condition(landmarks, blendshapes)
        hit_idx = torch.nonzero(hit, as_tuple=False).squeeze(-1)
        for s in range(0, hit_idx.shape[0], chunk):
            sel = hit_idx[s:s + chunk]
            rgb, _ = render_rays(model, origins[sel], dirs[sel], near[sel], far[sel],
                                 samples, cond, background, jitter[sel])
            img[sel] = rgb
    return img.clamp(0.0, 1.0).reshape(h, w, 3).numpy()


def nerf_loss(pred_pixels, gt_pixels, stage: str, pred_patch=None, gt_patch=None,
              perceptual=None, perceptual_weight: float = 0.1) -> tuple:
    """Summed squared pixel error, plus the weighted perceptual term in the fine stage."""
    if stage not in ("coarse", "fine"):
        raise ValidationError(f"stage must be 'coarse' or 'fine', got {stage!r}")
    pred_pixels = torch.as_tensor(pred_pixels)
    gt_pixels = torch.as_tensor(gt_pixels)
    if pred_pixels.shape != gt_pixels.shape:
        raise ShapeMismatchError(
            f"pixel shapes differ: {tuple(pred_pixels.shape)} vs {tuple(gt_pixels.shape)}")
    mse_term = ((pred_pixels - gt_pixels) ** 2).sum()
    if stage == "coarse":
        total = mse_term
        breakdown = {"mse": float(mse_term.detach()), "perceptual": 0.0,
                     "total": float(total.detach())}
        return total, breakdown
    if perceptual is None:
        raise ValidationError(
            "fine stage needs a perceptual backend; pass perceptual=... "
            "(see talkinghead.perceptual.RandomConvFeatures) or stay in the coarse stage")
    if pred_patch is None or gt_patch is None:
        raise ValidationError("fine stage needs pred_patch and gt_patch")
    perc = perceptual(pred_patch, gt_patch) * perceptual_weight
    total = mse_term + perc
    breakdown = {"mse": float(mse_term.detach()), "perceptual": float(perc.detach())}
    breakdown["total"] = breakdown["mse"] + breakdown["perceptual"]
    return total, breakdown


def psnr_of_mse(mse: float, cap: float = 99.0) -> float:
    if mse < 1e-10:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


@dataclass
class NerfTrainResult:
    model: RadianceModel
    curves: dict
    final_psnr: float
    background: tuple
    checkpoint_path: object = None
    per_frame_psnr: list = field(default_factory=list)


def _training_psnr(model, clip_tensors, samples, background, zero_landmarks, seed=123):
    frames, landmarks, blendshapes, rotations, translations, intr = clip_tensors
    total_mse, per_frame = 0.0, []
    for t in range(frames.shape[0]):
        lm = np.zeros_like(landmarks[t]) if zero_landmarks else landmarks[t]
        img = render_frame(model, rotations[t], translations[t], intr, lm,
                           blendshapes[t], frames.shape[1], samples, background,
                           seed=seed + t)
        mse = float(np.mean((img - frames[t]) ** 2))
        per_frame.append(psnr_of_mse(mse))
        total_mse += mse
    return psnr_of_mse(total_mse / frames.shape[0]), per_frame


def train_nerf(frames: np.ndarray, landmarks: np.ndarray, blendshapes: np.ndarray,
               rotations: np.ndarray, translations: np.ndarray, intrinsics: dict, *,
               steps: int = 20000, stage2_fraction: float = 0.2, rays_per_step: int = 512,
               samples: int = 24, patch_size: int = 32, lr: float = 5e-4,
               perceptual="default", perceptual_weight: float = 0.1,
               background=DEFAULT_BACKGROUND, seed: int = 0,
               eval_every: int = 500, target_psnr: float | None = None,
               zero_landmarks: bool = False, model: RadianceModel | None = None,
               model_kwargs: dict | None = None, out_dir=None) -> NerfTrainResult:
    """Two-stage fit: random-ray MSE, then patch sampling with the combined loss.

    `zero_landmarks` trains and evaluates with the landmark condition zeroed
    (the conditioning ablation). Early-stops once `target_psnr` is reached.
    """
    t_frames, h, w, _ = frames.shape
    if h != w:
        raise ValidationError("training frames must be square")
    if landmarks.shape[0] != t_frames or blendshapes.shape[0] != t_frames:
        raise ShapeMismatchError("frames, landmarks, and blendshapes must share one length")
    if perceptual == "default":
        from .perceptual import RandomConvFeatures

        perceptual = RandomConvFeatures(seed=seed)
    if stage2_fraction > 0 and perceptual is None:
        raise ValidationError(
            "fine stage needs a perceptual backend; pass perceptual=... or set stage2_fraction=0")

    torch.manual_seed(seed)
    if model is None:
        model = RadianceModel(blendshape_dim=blendshapes.shape[1], **(model_kwargs or {}))
    store = ParameterStore.from_module(model)
    opt = AdamOptimizer(store, AdamSettings(lr=lr))
    gen = torch.Generator().manual_seed(seed + 1)

    gt = torch.as_tensor(frames.reshape(t_frames, h * w, 3), dtype=torch.float32)
    lm_all = np.zeros_like(landmarks) if zero_landmarks else landmarks
    bs_all = torch.as_tensor(blendshapes, dtype=torch.float32)

    all_origins, all_dirs, all_near, all_far = [], [], [], []
    rows, cols = np.mgrid[0:h, 0:w]
    pixels = np.stack([rows.reshape(-1), cols.reshape(-1)], axis=-1)
    for t in range(t_frames):
        o, d = rays_from_pose(rotations[t], translations[t], intrinsics, pixels)
        near, far, hit = ray_box_intersection(o, d)
        far = torch.where(hit, far, near + 1e-3)  # misses composite to background
        all_origins.append(o)
        all_dirs.append(d)
        all_near.append(near)
        all_far.append(far)

    stage2_start = int(round(steps * (1.0 - stage2_fraction))) + 1
    curves = {"step": [], "loss": [], "mse": [], "perceptual": [],
              "eval_step": [], "psnr": []}
    clip_tensors = (frames, lm_all, blendshapes, rotations, translations, intrinsics)
    last_good = None
    best_psnr = -1.0
    stopped_at = steps

    model.train()
    for step in range(1, steps + 1):
        t = int(torch.randint(0, t_frames, (1,), generator=gen))
        cond, _ = model.encode_condition(lm_all[t], blendshapes[t])
        stage = "coarse" if step < stage2_start else "fine"
        if stage == "coarse":
            sel = torch.randint(0, h * w, (rays_per_step,), generator=gen)
        else:
            r0 = int(torch.randint(0, h - patch_size + 1, (1,), generator=gen))
            c0 = int(torch.randint(0, w - patch_size + 1, (1,), generator=gen))
            rr, cc = np.mgrid[r0:r0 + patch_size, c0:c0 + patch_size]
            sel = torch.as_tensor((rr * w + cc).reshape(-1))
        jitter = torch.rand(sel.shape[0], samples, generator=gen)
        rgb, _ = render_rays(model, all_origins[t][sel], all_dirs[t][sel],
                             all_near[t][sel], all_far[t][sel], samples,
                             cond, background, jitter)
        if stage == "coarse":
            loss, breakdown = nerf_loss(rgb, gt[t][sel], "coarse")
        else:
            pred_patch = rgb.reshape(patch_size, patch_size, 3)
            gt_patch = gt[t][sel].reshape(patch_size, patch_size, 3)
            loss, breakdown = nerf_loss(rgb, gt[t][sel], "fine", pred_patch, gt_patch,
                                        perceptual, perceptual_weight)
        if not math.isfinite(float(loss)):
            raise DivergenceError(f"NeRF loss non-finite at step {step}", last_good)
        loss.backward()
        adam_step(store, opt)

        curves["step"].append(step)
        curves["loss"].append(breakdown["total"])
        curves["mse"].append(breakdown["mse"])
        curves["perceptual"].append(breakdown["perceptual"])

        if step % eval_every == 0 or step == steps:
            model.eval()
            psnr, _ = _training_psnr(model, clip_tensors, samples, background, zero_landmarks)
            model.train()
            curves["eval_step"].append(step)
            curves["psnr"].append(psnr)
            best_psnr = max(best_psnr, psnr)
            if out_dir is not None:
                last_good = save_nerf_checkpoint(model, out_dir, step, background)
            if target_psnr is not None and psnr >= target_psnr:
                stopped_at = step
                break

    model.eval()
    final_psnr, per_frame = _training_psnr(model, clip_tensors, samples, background,
                                           zero_landmarks)
    path = save_nerf_checkpoint(model, out_dir, stopped_at, background) if out_dir else None
    return NerfTrainResult(model=model, curves=curves, final_psnr=final_psnr,
                           background=tuple(float(b) for b in background),
                           checkpoint_path=path, per_frame_psnr=per_frame)


def save_nerf_checkpoint(model: RadianceModel, out_dir, step: int, background):
    config = {"stage": "nerf", "background": [float(b) for b in background], **model.hyper}
    return save_checkpoint(module_state_tensors(model), out_dir, step=step, config=config)


def load_nerf_checkpoint(checkpoint):
    from .dataio import load_module_state

    hyper = {k: int(v) for k, v in checkpoint.config.items()
             if k not in ("stage", "background")}
    model = RadianceModel(**hyper)
    load_module_state(model, checkpoint)
    model.eval()
    background = tuple(checkpoint.config.get("background", DEFAULT_BACKGROUND))
    return model, background
