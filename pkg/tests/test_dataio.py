import json

import numpy as np
import pytest
import torch

from talkinghead import dataio, synth
from talkinghead.core import (
    CheckpointFormatError,
    MissingFileError,
    SchemaVersionError,
    ShapeMismatchError,
    ValidationError,
)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    synth.synthesize_dataset(out, seed=3, clips_per_emotion=1,
                             emotions=("happy", "neutral"), frames=6, resolution=32)
    return out


def test_round_trip_landmarks(dataset_dir):
    manifest = dataio.load_dataset(dataset_dir)
    clip = manifest.clips[0].load(with_frames=False)
    generated = synth.generate_clip(3, "happy", frames=6, resolution=32)
    assert np.array_equal(clip.landmarks, generated.landmarks)  # %.9g is float32-exact
    assert np.array_equal(clip.audio_content, generated.audio_content)


def test_frames_round_trip_quantized(dataset_dir):
    manifest = dataio.load_dataset(dataset_dir)
    clip = manifest.clips[0].load()
    generated = synth.generate_clip(3, "happy", frames=6, resolution=32)
    # PNG stores uint8; loader returns the same quantized values
    assert np.array_equal(np.round(generated.frames * 255).astype(np.uint8),
                          np.round(clip.frames * 255).astype(np.uint8))


def test_missing_file_error(dataset_dir, tmp_path):
    import shutil

    broken = tmp_path / "broken"
    shutil.copytree(dataset_dir, broken)
    (broken / "clip_000" / "frames" / "00002.png").unlink()
    with pytest.raises(MissingFileError) as err:
        dataio.load_dataset(broken)
    assert "clip_000" in str(err.value)


def test_shape_mismatch_error(dataset_dir, tmp_path):
    import shutil

    broken = tmp_path / "badcols"
    shutil.copytree(dataset_dir, broken)
    lm = np.loadtxt(broken / "clip_000" / "landmarks.csv", delimiter=",", ndmin=2)
    np.savetxt(broken / "clip_000" / "landmarks.csv", lm[:, :203], fmt="%.9g", delimiter=",")
    with pytest.raises(ShapeMismatchError) as err:
        dataio.load_dataset(broken)
    assert "203" in str(err.value)


def test_unknown_schema_version(dataset_dir, tmp_path):
    import shutil

    broken = tmp_path / "badver"
    shutil.copytree(dataset_dir, broken)
    doc = json.loads((broken / "manifest.json").read_text())
    doc["schema_version"] = 99
    (broken / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaVersionError):
        dataio.load_dataset(broken)


def test_pose_validation():
    bad = dataio.HeadPose(np.eye(3) * 1.1, np.zeros(3))
    with pytest.raises(ValidationError):
        bad.validate()
    good = dataio.HeadPose(np.eye(3, dtype=np.float32), np.zeros(3, dtype=np.float32))
    good.validate()


def test_blendshapes_clamped(tmp_path):
    path = tmp_path / "b.csv"
    np.savetxt(path, np.array([[1.5, -0.2, 0.5]]), delimiter=",")
    values = dataio.load_blendshapes(path)
    assert values.min() >= 0.0 and values.max() <= 1.0


def test_checkpoint_round_trip_bit_exact(tmp_path):
    tensors = {"a.weight": np.random.randn(4, 5).astype(np.float32),
               "b": np.random.randn(7).astype(np.float32)}
    path = dataio.save_checkpoint(tensors, tmp_path / "ckpt", step=12,
                                  config={"stage": "test", "landmark_dim": 204})
    loaded = dataio.load_checkpoint(path)
    assert loaded.step == 12
    assert loaded.config["landmark_dim"] == 204
    for name, arr in tensors.items():
        assert np.array_equal(loaded.tensors[name], arr)
        assert loaded.tensors[name].tobytes() == arr.tobytes()


def test_checkpoint_duplicate_name_rejected(tmp_path):
    pairs = [("w", np.zeros(2, dtype=np.float32)), ("w", np.ones(2, dtype=np.float32))]
    with pytest.raises(CheckpointFormatError) as err:
        dataio.save_checkpoint(pairs, tmp_path / "dup")
    assert "w" in str(err.value)


def test_checkpoint_truncated_rejected(tmp_path):
    path = dataio.save_checkpoint({"w": np.zeros(8, dtype=np.float32)}, tmp_path / "tr")
    blob = (path / "tensors.bin").read_bytes()
    (path / "tensors.bin").write_bytes(blob[:-4])
    with pytest.raises(CheckpointFormatError) as err:
        dataio.load_checkpoint(path)
    assert "truncated" in str(err.value)


def test_checkpoint_version_rejected(tmp_path):
    path = dataio.save_checkpoint({"w": np.zeros(2, dtype=np.float32)}, tmp_path / "v")
    doc = json.loads((path / "index.json").read_text())
    doc["format_version"] = 3
    (path / "index.json").write_text(json.dumps(doc))
    with pytest.raises(CheckpointFormatError):
        dataio.load_checkpoint(path)


def test_module_state_round_trip(tmp_path):
    module = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.BatchNorm1d(4))
    path = dataio.save_checkpoint(dataio.module_state_tensors(module), tmp_path / "m",
                                  config={"stage": "test"})
    clone = torch.nn.Sequential(torch.nn.Linear(3, 4), torch.nn.BatchNorm1d(4))
    dataio.load_module_state(clone, dataio.load_checkpoint(path))
    for (_, a), (_, b) in zip(module.state_dict().items(), clone.state_dict().items()):
        assert torch.equal(a.float(), b.float())


def test_manifest_order_preserved(dataset_dir):
    manifest = dataio.load_dataset(dataset_dir)
    assert [h.name for h in manifest.clips] == ["clip_000", "clip_001"]
    assert manifest.clips[0].emotion == "happy"
