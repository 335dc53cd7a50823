"""Evaluation metrics: PSNR, SSIM, mouth/face landmark distance, sync gap.

SSIM follows the standard formulation (11x11 Gaussian window, sigma 1.5,
k1 0.01, k2 0.03, dynamic range 1) on the luminance channel; the tests pin
it against an independent reference implementation. Landmark distances use
mouth points 48-67 of the 68-point convention.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import MOUTH_INDICES, ShapeMismatchError, ValidationError
from .sync import SyncScorer, sync_score

PSNR_CAP = 99.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def psnr(pred: np.ndarray, gt: np.ndarray, cap: float = PSNR_CAP) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; capped for near-identical pairs."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"image shapes differ: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-10:
        return cap
    return min(10.0 * math.log10(1.0 / mse), cap)


def to_luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ np.asarray(LUMA_WEIGHTS)
    raise ShapeMismatchError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()

_SSIM_WINDOW = _gaussian_window()


def _window_means(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via explicit window sums."""
    kh, kw = win.shape
    h, w = img.shape
    out = np.zeros((h - kh + 1, w - kw + 1), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += win[i, j] * img[i:i + h - kh + 1, j:j + w - kw + 1]
    return out


def ssim(pred: np.ndarray, gt: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean local structural similarity on luminance; in [-1, 1]."""
    a = to_luminance(pred)
    b = to_luminance(gt)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    win = _SSIM_WINDOW
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise ValidationError(
            f"image {a.shape} smaller than the {win.shape[0]}x{win.shape[1]} SSIM window")

    mu_a = _window_means(a, win)
    mu_b = _window_means(b, win)
    # gaussian-weighted (population) local moments
    var_a = _window_means(a * a, win) - mu_a ** 2
    var_b = _window_means(b * b, win) - mu_b ** 2
    cov = _window_means(a * b, win) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def lmd(pred_landmarks: np.ndarray, gt_landmarks: np.ndarray, region: str = "face") -> float:
    """Mean over frames of mean per-point Euclidean distance."""
    pred = np.asarray(pred_landmarks, dtype=np.float64)
    gt = np.asarray(gt_landmarks, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[None, :]
        gt = gt[None, :]
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"landmark shapes differ: {pred.shape} vs {gt.shape}")
    if pred.shape[1] % 3 != 0:
        raise ShapeMismatchError("landmark frames must be flattened xyz")
    points = pred.shape[1] // 3
    dists = np.linalg.norm(pred.reshape(-1, points, 3) - gt.reshape(-1, points, 3), axis=-1)
    if region == "mouth":
        dists = dists[:, list(MOUTH_INDICES)]
    elif region != "face":
        raise ValidationError(f"region must be 'mouth' or 'face', got {region!r}")
    return float(dists.mean(axis=1).mean())


def per_frame_lmd(pred_landmarks, gt_landmarks, region: str = "face") -> list:
    pred = np.asarray(pred_landmarks)
    return [lmd(pred[t], np.asarray(gt_landmarks)[t], region) for t in range(pred.shape[0])]


def sync_eval(audio_windows, landmark_windows, scorer: SyncScorer, shift: int | None = None,
              seed: int = 0) -> dict:
    """Mean aligned score minus mean shifted score over paired windows."""
    audio_windows = np.asarray(audio_windows, dtype=np.float32)
    landmark_windows = np.asarray(landmark_windows, dtype=np.float32)
    n = audio_windows.shape[0]
    if landmark_windows.shape[0] != n:
        raise ShapeMismatchError("need equally many audio and landmark windows")
    if n < 10:
        raise ValidationError(f"need at least 10 windows for a stable estimate, got {n}")
    shift = shift if shift is not None else max(scorer.window, n // 3)
    perm = (np.arange(n) + shift) % n
    with torch.no_grad():
        aligned = sync_score(scorer, audio_windows, landmark_windows)
        shifted = sync_score(scorer, audio_windows[perm], landmark_windows)
    out = {
        "aligned_mean": float(aligned.mean()),
        "shifted_mean": float(shifted.mean()),
        "gap": float(aligned.mean() - shifted.mean()),
        "windows": n,
    }
    return out


@dataclass
class MetricReport:
    clip_id: str
    method: str
    per_frame: dict = field(default_factory=dict)   # name -> list of floats
    extra: dict = field(default_factory=dict)       # scalar metrics without per-frame values

    @property
    def aggregates(self) -> dict:
        agg = {name: float(np.mean(values)) for name, values in self.per_frame.items()}
        agg.update(self.extra)
        return agg

    def merge_external(self, name: str, values):
        """Attach an externally computed per-frame metric (e.g. an emotion scorer)."""
        values = [float(v) for v in values]
        expected = {len(v) for v in self.per_frame.values()}
        if expected and len(values) not in expected:
            raise ShapeMismatchError(
                f"external metric {name!r} has {len(values)} frames, report has {expected.pop()}")
        self.per_frame[name] = values

    def to_json(self, path):
        doc = {"clip_id": self.clip_id, "method": self.method,
               "per_frame": self.per_frame, "aggregates": self.aggregates}
        Path(path).write_text(json.dumps(doc, indent=1))
        return path

    def csv_row(self) -> dict:
        row = {"clip_id": self.clip_id, "method": self.method}
        row.update({k: f"{v:.6f}" for k, v in sorted(self.aggregates.items())})
        return row


def write_summary_csv(reports, path):
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to summarize")
    rows = [r.csv_row() for r in reports]
    names = list(rows[0])
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=names)
        writer.writeheader()
        writer.writerows(rows)
    return path


def evaluate_frames(pred_frames, gt_frames, pred_landmarks=None, gt_landmarks=None,
                    clip_id: str = "clip", method: str = "pipeline") -> MetricReport:
    """Full per-frame metric sweep for one clip."""
    pred_frames = np.asarray(pred_frames)
    gt_frames = np.asarray(gt_frames)
    if pred_frames.shape != gt_frames.shape:
        raise ShapeMismatchError(
            f"frame stacks differ: {pred_frames.shape} vs {gt_frames.shape}")
    report = MetricReport(clip_id=clip_id, method=method)
    report.per_frame["psnr"] = [psnr(pred_frames[t], gt_frames[t])
                                for t in range(pred_frames.shape[0])]
    report.per_frame["ssim"] = [ssim(pred_frames[t], gt_frames[t])
                                for t in range(pred_frames.shape[0])]
    if pred_landmarks is not None and gt_landmarks is not None:
        report.per_frame["m_lmd"] = per_frame_lmd(pred_landmarks, gt_landmarks, "mouth")
        report.per_frame["f_lmd"] = per_frame_lmd(pred_landmarks, gt_landmarks, "face")
    return report
