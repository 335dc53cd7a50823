"""Procedural toy face dataset with analytically known ground truth.

Every clip decomposes exactly as

    landmarks[t] = canonical + emotion_field(emotion) + mouth_motion(audio[t])

All three components are quantized to a 2**-12 grid, which keeps the float32
additions exact, so the decomposition can be recovered bit-for-bit and the
generator doubles as the oracle for the motion and deformation stages.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    EMOTIONS,
    LANDMARK_DIM,
    MOUTH_INDICES,
    NEUTRAL,
    NUM_POINTS,
    ValidationError,
    check_emotion,
)

QUANTUM = 2.0 ** -12  # all geometry lives on this grid -> exact float32 sums
VALID_RESOLUTIONS = (32, 64, 128)

# Fixed reader that turns audio features into a mouth-opening scalar.
# Seeded independently of clips so the audio-to-motion mapping is global.
_READOUT_SEED = 20406
_FIELD_DEFAULT_SEED = 777

# iBUG-style point groups used for splat colors and the mouth basis.
_JAW = range(0, 17)
_BROWS = range(17, 27)
_NOSE = range(27, 36)
_EYES = range(36, 48)
_OUTER_LIP = range(48, 60)
_INNER_LIP = range(60, 68)


def _quantize(a: np.ndarray) -> np.ndarray:
    return (np.round(np.asarray(a, dtype=np.float64) / QUANTUM) * QUANTUM).astype(np.float32)


@dataclass(frozen=True)
class SynthSettings:
    """Knobs of the toy generator; defaults target a desk-scale face."""

    content_dim: int = 16
    pitch_dim: int = 4
    blendshape_dim: int = 8
    mouth_amplitude: float = 0.45
    emotion_norm: float = 0.2
    emotion_max_norm: float = 0.3
    emotion_separation: float = 0.05
    field_seed: int = _FIELD_DEFAULT_SEED
    topology_seed: int = 11
    camera_radius: float = 2.3
    camera_sweep_deg: float = 15.0
    splat_sigma: float = 1.35       # pixels at resolution 64, scaled linearly
    mouth_splat_scale: float = 2.6  # lip splats are larger so mouth motion owns more pixels
    splat_alpha: float = 0.85
    background: tuple = (0.12, 0.12, 0.15)
    fps: float = 25.0
    blendshape_walk: float = 0.008  # per-frame random-walk step of the coefficients


DEFAULT_SETTINGS = SynthSettings()


@dataclass(frozen=True)
class CanonicalFace:
    points: np.ndarray  # (68, 3) float32, quantized
    mouth_indices: tuple
    topology_seed: int


@dataclass
class SyntheticClip:
    frames: np.ndarray        # (T, H, W, 3) float32 in [0, 1]
    landmarks: np.ndarray     # (T, 204) float32
    audio_content: np.ndarray  # (T, D_a) float32
    audio_pitch: np.ndarray    # (T, D_p) float32
    blendshapes: np.ndarray    # (T, D_b) float32 in [0, 1]
    rotations: np.ndarray      # (T, 3, 3) float32, world-to-camera
    translations: np.ndarray   # (T, 3) float32
    intrinsics: dict
    emotion: str
    seed: int

    def __len__(self):
        return self.frames.shape[0]


def canonical_face(topology_seed: int = DEFAULT_SETTINGS.topology_seed) -> CanonicalFace:
    """68 landmark points of the toy head, unit-scale, x right / y up / z out."""
    pts = np.zeros((NUM_POINTS, 3), dtype=np.float64)

    psi = np.linspace(-1.0, 1.0, 17)
    pts[_JAW, 0] = 0.52 * np.sin(psi * np.pi / 2)
    pts[_JAW, 1] = 0.12 - 0.62 * np.cos(psi * np.pi / 2)
    pts[_JAW, 2] = -0.05 + 0.05 * np.cos(psi * np.pi / 2)

    for side, rng_pts in ((-1.0, range(17, 22)), (1.0, range(22, 27))):
        xs = np.linspace(0.10, 0.42, 5) * side
        arc = np.linspace(0.0, np.pi, 5)
        pts[rng_pts, 0] = xs
        pts[rng_pts, 1] = 0.22 + 0.03 * np.sin(arc)
        pts[rng_pts, 2] = 0.08

    pts[27:31, 0] = 0.0
    pts[27:31, 1] = np.linspace(0.16, -0.04, 4)
    pts[27:31, 2] = np.linspace(0.10, 0.22, 4)
    pts[31:36, 0] = np.linspace(-0.12, 0.12, 5)
    pts[31:36, 1] = -0.10
    pts[31:36, 2] = 0.12

    for cx, rng_pts in ((-0.26, range(36, 42)), (0.26, range(42, 48))):
        ang = np.linspace(0.0, 2 * np.pi, 6, endpoint=False)
        pts[rng_pts, 0] = cx + 0.075 * np.cos(ang)
        pts[rng_pts, 1] = 0.12 + 0.035 * np.sin(ang)
        pts[rng_pts, 2] = 0.05

    ang = np.linspace(0.0, 2 * np.pi, 12, endpoint=False)
    pts[_OUTER_LIP, 0] = 0.18 * np.cos(ang)
    pts[_OUTER_LIP, 1] = -0.28 + 0.08 * np.sin(ang)
    pts[_OUTER_LIP, 2] = 0.07
    ang = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
    pts[_INNER_LIP, 0] = 0.10 * np.cos(ang)
    pts[_INNER_LIP, 1] = -0.28 + 0.035 * np.sin(ang)
    pts[_INNER_LIP, 2] = 0.075

    rng = np.random.default_rng(topology_seed)
    pts += rng.normal(0.0, 0.01, size=pts.shape)
    return CanonicalFace(points=_quantize(pts), mouth_indices=MOUTH_INDICES, topology_seed=topology_seed)


def mouth_basis() -> np.ndarray:
    """Fixed 204-dim direction of mouth articulation, supported on mouth points only."""
    basis = np.zeros((NUM_POINTS, 3), dtype=np.float64)
    outer = list(_OUTER_LIP)
    inner = list(_INNER_LIP)
    # outer ring angles: index 0 is the right corner, 3 the top, 9 the bottom
    basis[[outer[i] for i in (1, 2, 3, 4, 5)], 1] = 0.25   # upper outer lip up
    basis[[outer[i] for i in (7, 8, 9, 10, 11)], 1] = -1.0  # lower outer lip down
    basis[[inner[i] for i in (1, 2, 3)], 1] = 0.20
    basis[[inner[i] for i in (5, 6, 7)], 1] = -0.80
    basis[[outer[0], outer[6], inner[0], inner[4]], 1] = -0.10  # corners
    return _quantize(basis.reshape(-1))


def readout_vector(content_dim: int = DEFAULT_SETTINGS.content_dim) -> np.ndarray:
    """Zero-mean unit vector mapping one audio feature row to the mouth scalar."""
    rng = np.random.default_rng(_READOUT_SEED)
    w = rng.normal(size=content_dim)
    w -= w.mean()
    w /= np.linalg.norm(w)
    return w.astype(np.float64)


def mouth_motion(audio_content: np.ndarray, settings: SynthSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Exact per-frame mouth displacement (T, 204) for the given audio features."""
    a = np.asarray(audio_content, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    w = readout_vector(a.shape[1])
    scalar = a @ w  # linear readout
    disp = settings.mouth_amplitude * scalar[:, None] * mouth_basis()[None, :].astype(np.float64)
    return _quantize(disp)


def emotion_fields(settings: SynthSettings = DEFAULT_SETTINGS) -> dict:
    """Per-emotion 204-dim displacement fields; neutral is exactly zero."""
    rng = np.random.default_rng(settings.field_seed)
    fields = {}
    for name in EMOTIONS:
        if name == NEUTRAL:
            fields[name] = np.zeros(LANDMARK_DIM, dtype=np.float32)
            continue
        raw = rng.normal(size=(NUM_POINTS, 3))
        kernel = np.ones(5) / 5.0
        for c in range(3):
            raw[:, c] = np.convolve(np.pad(raw[:, c], 2, mode="reflect"), kernel, mode="valid")
        vec = raw.reshape(-1)
        vec *= settings.emotion_norm / np.linalg.norm(vec)
        fields[name] = _quantize(vec)

    names = list(EMOTIONS)
    for i, a in enumerate(names):
        norm = float(np.linalg.norm(fields[a]))
        if norm > settings.emotion_max_norm:
            raise ValidationError(f"emotion field {a} exceeds max norm: {norm}")
        for b in names[i + 1:]:
            dist = float(np.linalg.norm(fields[a].astype(np.float64) - fields[b].astype(np.float64)))
            if dist < settings.emotion_separation:
                raise ValidationError(f"emotion fields {a} and {b} too close: {dist}")
    return fields


def oracle_displacement(emotion: str, settings: SynthSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """The exact displacement the generator applies for `emotion`."""
    check_emotion(emotion)
    return emotion_fields(settings)[emotion].copy()


def _synth_bands(rng: np.random.Generator, frames: int, dim: int, fps: float,
                 freq_range=(0.5, 3.5), base=0.5, depth=0.45) -> np.ndarray:
    t = np.arange(frames, dtype=np.float64) / fps
    freqs = rng.uniform(*freq_range, size=dim)
    phases = rng.uniform(0.0, 2 * np.pi, size=dim)
    out = base + depth * np.sin(2 * np.pi * freqs[None, :] * t[:, None] + phases[None, :])
    return out.astype(np.float32)


def _orbit_pose(theta: float, height: float, radius: float):
    """World-to-camera rotation and translation for a camera looking at the origin."""
    c = np.array([radius * np.sin(theta), height, radius * np.cos(theta)], dtype=np.float64)
    fwd = -c / np.linalg.norm(c)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=0)
    trans = -rot @ c
    return rot.astype(np.float32), trans.astype(np.float32)


def default_intrinsics(resolution: int) -> dict:
    f = 1.1 * resolution
    return {"fx": f, "fy": f, "cx": resolution / 2.0, "cy": resolution / 2.0,
            "width": resolution, "height": resolution}


def _point_colors() -> np.ndarray:
    colors = np.zeros((NUM_POINTS, 3), dtype=np.float32)
    colors[list(_JAW)] = (0.84, 0.64, 0.52)
    colors[list(_BROWS)] = (0.35, 0.22, 0.12)
    colors[list(_NOSE)] = (0.90, 0.72, 0.58)
    colors[list(_EYES)] = (0.16, 0.22, 0.46)
    colors[list(_OUTER_LIP)] = (0.78, 0.20, 0.25)
    colors[list(_INNER_LIP)] = (0.50, 0.08, 0.13)
    return colors


def rasterize(points: np.ndarray, rotation: np.ndarray, translation: np.ndarray,
              intrinsics: dict, resolution: int,
              settings: SynthSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Splat the 68 colored points onto a frame, compositing far to near."""
    pts = np.asarray(points, dtype=np.float64).reshape(NUM_POINTS, 3)
    cam = pts @ np.asarray(rotation, dtype=np.float64).T + np.asarray(translation, dtype=np.float64)
    z = cam[:, 2]
    u = intrinsics["fx"] * cam[:, 0] / z + intrinsics["cx"]
    v = intrinsics["fy"] * cam[:, 1] / z + intrinsics["cy"]

    h = w = resolution
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = np.asarray(settings.background, dtype=np.float32)

    base_sigma = settings.splat_sigma * resolution / 64.0
    sigmas = np.full(NUM_POINTS, base_sigma)
    sigmas[list(MOUTH_INDICES)] = base_sigma * settings.mouth_splat_scale
    colors = _point_colors()
    order = np.argsort(-z)  # far first
    for idx in order:
        sigma = sigmas[idx]
        rad = int(np.ceil(3.0 * sigma))
        cx, cy = u[idx], v[idx]
        ix, iy = int(np.floor(cx)), int(np.floor(cy))
        x0, x1 = max(ix - rad, 0), min(ix + rad + 1, w)
        y0, y1 = max(iy - rad, 0), min(iy + rad + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        gx = np.arange(x0, x1, dtype=np.float64) + 0.5 - cx
        gy = np.arange(y0, y1, dtype=np.float64) + 0.5 - cy
        alpha = settings.splat_alpha * np.exp(-(gx[None, :] ** 2 + gy[:, None] ** 2) / (2 * sigma * sigma))
        alpha = alpha.astype(np.float32)[:, :, None]
        img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1.0 - alpha) + colors[idx] * alpha
    return np.clip(img, 0.0, 1.0)


def generate_clip(seed: int, emotion: str, frames: int = 16, resolution: int = 64,
                  settings: SynthSettings = DEFAULT_SETTINGS) -> SyntheticClip:
    """Deterministic toy clip; the landmark decomposition is exact by construction."""
    check_emotion(emotion)
    if frames < 1:
        raise ValidationError(f"frames must be >= 1, got {frames}")
    if resolution not in VALID_RESOLUTIONS:
        raise ValidationError(f"resolution must be one of {VALID_RESOLUTIONS}, got {resolution}")

    rng = np.random.default_rng(seed)
    face = canonical_face(settings.topology_seed)
    field = emotion_fields(settings)[emotion]

    content = _synth_bands(rng, frames, settings.content_dim, settings.fps)
    pitch = _synth_bands(rng, frames, settings.pitch_dim, settings.fps, freq_range=(0.2, 1.2))
    motion = mouth_motion(content, settings)

    base = face.points.reshape(-1) + field  # exact on the quantum grid
    landmarks = (base[None, :] + motion).astype(np.float32)

    bs = np.empty((frames, settings.blendshape_dim), dtype=np.float32)
    bs[0] = rng.uniform(0.3, 0.7, size=settings.blendshape_dim)
    for t in range(1, frames):
        bs[t] = np.clip(bs[t - 1] + rng.normal(0.0, settings.blendshape_walk,
                                               size=settings.blendshape_dim), 0.0, 1.0)

    sweep = np.deg2rad(settings.camera_sweep_deg)
    theta0 = rng.uniform(-0.05, 0.05)
    phase = rng.uniform(0.0, 2 * np.pi)
    rotations = np.empty((frames, 3, 3), dtype=np.float32)
    translations = np.empty((frames, 3), dtype=np.float32)
    for t in range(frames):
        frac = t / (frames - 1) if frames > 1 else 0.5
        theta = theta0 + sweep * (2.0 * frac - 1.0)
        height = 0.12 * np.sin(2 * np.pi * frac + phase)
        rotations[t], translations[t] = _orbit_pose(theta, height, settings.camera_radius)

    intr = default_intrinsics(resolution)
    imgs = np.stack([
        rasterize(landmarks[t], rotations[t], translations[t], intr, resolution, settings)
        for t in range(frames)
    ])

    return SyntheticClip(frames=imgs, landmarks=landmarks, audio_content=content,
                         audio_pitch=pitch, blendshapes=bs, rotations=rotations,
                         translations=translations, intrinsics=intr, emotion=emotion, seed=seed)


# ---------------------------------------------------------------------------
# on-disk formats (shared contract with dataio)

RTAF_MAGIC = b"RTAF"


def write_feature_blob(path, array: np.ndarray):
    a = np.ascontiguousarray(array, dtype=np.float32)
    if a.ndim != 2:
        raise ValidationError(f"feature blob must be 2-D, got shape {a.shape}")
    with open(path, "wb") as f:
        f.write(RTAF_MAGIC)
        f.write(struct.pack("<II", a.shape[0], a.shape[1]))
        f.write(a.astype("<f4").tobytes())


def write_clip(clip: SyntheticClip, clip_dir):
    """Write one clip in the dataset layout (frames/, CSVs, feature blobs, poses)."""
    from pathlib import Path

    from PIL import Image

    d = Path(clip_dir)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    for t in range(len(clip)):
        arr = np.round(clip.frames[t] * 255.0).astype(np.uint8)
        Image.fromarray(arr).save(d / "frames" / f"{t:05d}.png")

    np.savetxt(d / "landmarks.csv", clip.landmarks, fmt="%.9g", delimiter=",")
    np.savetxt(d / "blendshapes.csv", clip.blendshapes, fmt="%.9g", delimiter=",")
    write_feature_blob(d / "audio_features.bin", clip.audio_content)
    write_feature_blob(d / "pitch_features.bin", clip.audio_pitch)

    poses = {
        "intrinsics": {k: float(v) for k, v in clip.intrinsics.items()},
        "frames": [
            {
                "rotation": [float(x) for x in clip.rotations[t].reshape(-1)],
                "translation": [float(x) for x in clip.translations[t]],
            }
            for t in range(len(clip))
        ],
    }
    with open(d / "poses.json", "w") as f:
        json.dump(poses, f, indent=1)


def synthesize_dataset(out_dir, seed: int = 0, clips_per_emotion: int = 1,
                       emotions=EMOTIONS, frames: int = 16, resolution: int = 64,
                       settings: SynthSettings = DEFAULT_SETTINGS) -> dict:
    """Generate a full dataset directory with manifest; returns the manifest dict."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    k = 0
    for emotion in emotions:
        check_emotion(emotion)
        for _ in range(clips_per_emotion):
            name = f"clip_{k:03d}"
            clip = generate_clip(seed + k, emotion, frames, resolution, settings)
            write_clip(clip, out / name)
            entries.append({"path": name, "emotion": emotion,
                            "frames": frames, "resolution": resolution})
            k += 1
    manifest = {
        "schema_version": 1,
        "landmark_dim": LANDMARK_DIM,
        "blendshape_dim": settings.blendshape_dim,
        "content_dim": settings.content_dim,
        "pitch_dim": settings.pitch_dim,
        "clips": entries,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest
