"""Dataset directory and checkpoint formats.

Dataset layout (one directory per clip, manifest at the root):

    manifest.json
    clip_000/frames/00000.png ...
    clip_000/landmarks.csv        T rows x 204 decimal columns
    clip_000/audio_features.bin   "RTAF", u32 T, u32 D, T*D float32 LE
    clip_000/pitch_features.bin   second RTAF blob
    clip_000/blendshapes.csv
    clip_000/poses.json           rotation 9 floats row-major, translation 3, intrinsics

Checkpoints: index.json (names, shapes, step, config snapshot) plus
tensors.bin holding the float32 little-endian payloads concatenated in
index order. Round trips are bit exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    LANDMARK_DIM,
    CheckpointFormatError,
    MissingFileError,
    SchemaVersionError,
    ShapeMismatchError,
    ValidationError,
    check_emotion,
)
from .synth import RTAF_MAGIC

DATASET_SCHEMA_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1


def read_feature_blob(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != RTAF_MAGIC:
        raise ShapeMismatchError(f"{path}: not an RTAF feature blob")
    t, d = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * t * d
    if len(raw) != expected:
        raise ShapeMismatchError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    return np.frombuffer(raw[12:], dtype="<f4").reshape(t, d).copy()


@dataclass(frozen=True)
class HeadPose:
    rotation: np.ndarray     # (3, 3) world-to-camera
    translation: np.ndarray  # (3,)
    keypoints: np.ndarray | None = None  # optional tracked 2-D points, unused by rendering

    def validate(self, name: str = "pose"):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ShapeMismatchError(f"{name}: rotation must be 3x3, got {r.shape}")
        if abs(np.linalg.det(r) - 1.0) > 1e-5:
            raise ValidationError(f"{name}: |det(R) - 1| exceeds 1e-5")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-5:
            raise ValidationError(f"{name}: R not orthonormal within 1e-5")
        return self


def load_blendshapes(path, expected_dim: int | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    values = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
    if expected_dim is not None and values.shape[1] != expected_dim:
        raise ShapeMismatchError(
            f"{path}: blendshape dim {values.shape[1]}, manifest says {expected_dim}")
    return np.clip(values, 0.0, 1.0)


def load_poses(path) -> tuple:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    with open(path) as f:
        doc = json.load(f)
    intr = doc["intrinsics"]
    rotations, translations = [], []
    for i, fr in enumerate(doc["frames"]):
        rot = np.asarray(fr["rotation"], dtype=np.float32)
        if rot.shape != (9,):
            raise ShapeMismatchError(f"{path}: frame {i} rotation must have 9 floats")
        rot = rot.reshape(3, 3)
        trans = np.asarray(fr["translation"], dtype=np.float32)
        if trans.shape != (3,):
            raise ShapeMismatchError(f"{path}: frame {i} translation must have 3 floats")
        HeadPose(rot, trans).validate(f"{path} frame {i}")
        rotations.append(rot)
        translations.append(trans)
    return np.stack(rotations), np.stack(translations), intr


def load_landmarks(path, expected_dim: int = LANDMARK_DIM) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing file: {path}")
    values = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
    if values.shape[1] != expected_dim:
        raise ShapeMismatchError(
            f"{path}: landmark rows have {values.shape[1]} columns, expected {expected_dim}")
    return values


def load_frames(frames_dir, count: int) -> np.ndarray:
    from PIL import Image

    frames_dir = Path(frames_dir)
    out = []
    for t in range(count):
        p = frames_dir / f"{t:05d}.png"
        if not p.exists():
            raise MissingFileError(f"missing file: {p}")
        out.append(np.asarray(Image.open(p), dtype=np.float32) / 255.0)
    return np.stack(out)


@dataclass
class LoadedClip:
    name: str
    emotion: str
    frames: np.ndarray
    landmarks: np.ndarray
    audio_content: np.ndarray
    audio_pitch: np.ndarray
    blendshapes: np.ndarray
    rotations: np.ndarray
    translations: np.ndarray
    intrinsics: dict

    def __len__(self):
        return self.landmarks.shape[0]


class ClipHandle:
    """Lazy accessor for one clip directory; validates lengths on load."""

    def __init__(self, root: Path, entry: dict, manifest: dict):
        self.root = Path(root)
        self.entry = entry
        self.manifest = manifest
        self.name = entry["path"]
        self.emotion = entry["emotion"]
        self.frame_count = int(entry["frames"])
        self.resolution = int(entry["resolution"])

    @property
    def path(self) -> Path:
        return self.root / self.name

    def load(self, with_frames: bool = True) -> LoadedClip:
        d = self.path
        lms = load_landmarks(d / "landmarks.csv", self.manifest.get("landmark_dim", LANDMARK_DIM))
        audio = read_feature_blob(d / "audio_features.bin")
        pitch = read_feature_blob(d / "pitch_features.bin")
        bs = load_blendshapes(d / "blendshapes.csv", self.manifest.get("blendshape_dim"))
        rot, trans, intr = load_poses(d / "poses.json")
        frames = load_frames(d / "frames", self.frame_count) if with_frames else \
            np.zeros((self.frame_count, 0, 0, 3), dtype=np.float32)

        t = self.frame_count
        for label, arr in (("landmarks.csv", lms), ("audio_features.bin", audio),
                           ("pitch_features.bin", pitch), ("blendshapes.csv", bs),
                           ("poses.json", rot)):
            if arr.shape[0] != t:
                raise ShapeMismatchError(
                    f"clip {self.name}: {label} has {arr.shape[0]} rows, manifest says {t}")
        if with_frames and frames.shape[0] != t:
            raise ShapeMismatchError(f"clip {self.name}: frame count mismatch")
        return LoadedClip(self.name, self.emotion, frames, lms, audio, pitch, bs,
                          rot, trans, intr)


@dataclass
class DatasetManifest:
    root: Path
    schema_version: int
    landmark_dim: int
    blendshape_dim: int
    clips: list  # of ClipHandle
    raw: dict

    def clip(self, name: str) -> ClipHandle:
        for handle in self.clips:
            if handle.name == name:
                return handle
        raise MissingFileError(f"no clip named {name!r} in {self.root}")


def load_dataset(path) -> DatasetManifest:
    """Validate a dataset directory and return lazy per-clip accessors."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise MissingFileError(f"missing file: {manifest_path}")
    with open(manifest_path) as f:
        raw = json.load(f)

    version = raw.get("schema_version")
    if version != DATASET_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{manifest_path}: schema_version {version!r}, supported: {DATASET_SCHEMA_VERSION}")

    landmark_dim = int(raw.get("landmark_dim", LANDMARK_DIM))
    handles = []
    for entry in raw.get("clips", []):
        check_emotion(entry["emotion"])
        d = root / entry["path"]
        for fname in ("landmarks.csv", "audio_features.bin", "pitch_features.bin",
                      "blendshapes.csv", "poses.json"):
            if not (d / fname).exists():
                raise MissingFileError(f"clip {entry['path']}: missing file: {d / fname}")
        for t in range(int(entry["frames"])):
            p = d / "frames" / f"{t:05d}.png"
            if not p.exists():
                raise MissingFileError(f"clip {entry['path']}: missing file: {p}")
        with open(d / "landmarks.csv") as f:
            first = f.readline().strip()
        ncols = len(first.split(",")) if first else 0
        if ncols != landmark_dim:
            raise ShapeMismatchError(
                f"clip {entry['path']}: landmarks.csv has {ncols} columns, expected {landmark_dim}")
        handles.append(ClipHandle(root, entry, raw))

    return DatasetManifest(root=root, schema_version=version, landmark_dim=landmark_dim,
                           blendshape_dim=int(raw.get("blendshape_dim", 8)),
                           clips=handles, raw=raw)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    tensors: dict       # name -> float32 ndarray
    step: int
    config: dict
    format_version: int = CHECKPOINT_FORMAT_VERSION


def save_checkpoint(tensors, path, step: int = 0, config: dict | None = None):
    """Write named float32 tensors; duplicate names are rejected up front."""
    if hasattr(tensors, "items"):
        items = list(tensors.items())
    else:
        items = list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise CheckpointFormatError(f"duplicate tensor name(s): {', '.join(dupes)}")

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = {"format_version": CHECKPOINT_FORMAT_VERSION, "step": int(step),
             "config": config or {}, "tensors": []}
    with open(path / "tensors.bin", "wb") as f:
        for name, tensor in items:
            raw = _to_numpy(tensor)
            arr = np.ascontiguousarray(raw, dtype="<f4")
            index["tensors"].append({"name": name, "shape": list(np.shape(raw))})
            f.write(arr.tobytes())
    with open(path / "index.json", "w") as f:
        json.dump(index, f, indent=1)
    return path


def _to_numpy(tensor) -> np.ndarray:
    if isinstance(tensor, np.ndarray):
        return tensor
    try:
        return tensor.detach().cpu().numpy()
    except AttributeError:
        return np.asarray(tensor)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    index_path = path / "index.json"
    blob_path = path / "tensors.bin"
    if not index_path.exists():
        raise MissingFileError(f"missing file: {index_path}")
    if not blob_path.exists():
        raise MissingFileError(f"missing file: {blob_path}")
    with open(index_path) as f:
        index = json.load(f)
    version = index.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format_version {version!r}, supported: {CHECKPOINT_FORMAT_VERSION}")

    raw = blob_path.read_bytes()
    expected = sum(int(np.prod(e["shape"])) for e in index["tensors"]) * 4
    if len(raw) < expected:
        raise CheckpointFormatError(
            f"{path}: truncated payload ({len(raw)} bytes, index implies {expected})")
    if len(raw) > expected:
        raise CheckpointFormatError(
            f"{path}: payload has {len(raw) - expected} trailing bytes")

    tensors = {}
    offset = 0
    for entry in index["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        tensors[entry["name"]] = arr
        offset += count * 4
    return Checkpoint(tensors=tensors, step=int(index.get("step", 0)),
                      config=index.get("config", {}), format_version=version)


def module_state_tensors(module) -> dict:
    """Ordered name -> ndarray view of a torch module's state_dict."""
    return {name: _to_numpy(value) for name, value in module.state_dict().items()}


def load_module_state(module, checkpoint: Checkpoint):
    """Load checkpoint tensors back into a torch module, strict on names/shapes."""
    import torch

    state = {}
    for name, value in module.state_dict().items():
        if name not in checkpoint.tensors:
            raise CheckpointFormatError(f"checkpoint missing tensor {name!r}")
        arr = checkpoint.tensors[name]
        if tuple(arr.shape) != tuple(value.shape):
            raise ShapeMismatchError(
                f"tensor {name!r}: checkpoint shape {tuple(arr.shape)}, module {tuple(value.shape)}")
        state[name] = torch.from_numpy(arr).to(value.dtype)
    module.load_state_dict(state)
    return module
