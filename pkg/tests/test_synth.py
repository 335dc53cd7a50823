import numpy as np
import pytest

from talkinghead import synth
from talkinghead.core import EMOTIONS, LANDMARK_DIM, MOUTH_INDICES, ValidationError


def test_generate_clip_deterministic():
    a = synth.generate_clip(1, "happy", frames=8, resolution=32)
    b = synth.generate_clip(1, "happy", frames=8, resolution=32)
    for field in ("frames", "landmarks", "audio_content", "audio_pitch",
                  "blendshapes", "rotations", "translations"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


def test_landmark_decomposition_exact(toy_clip):
    face = synth.canonical_face()
    motion = synth.mouth_motion(toy_clip.audio_content)
    field = synth.oracle_displacement("happy")
    residual = toy_clip.landmarks - face.points.reshape(-1)[None, :] - motion
    assert np.array_equal(residual, np.broadcast_to(field, residual.shape))


def test_non_mouth_points_carry_only_emotion(toy_clip):
    face = synth.canonical_face()
    field = synth.oracle_displacement("happy").reshape(-1, 3)
    disp = (toy_clip.landmarks - face.points.reshape(-1)[None, :]).reshape(len(toy_clip), -1, 3)
    non_mouth = [i for i in range(68) if i not in MOUTH_INDICES]
    for t in range(len(toy_clip)):
        assert np.array_equal(disp[t, non_mouth], field[non_mouth])


def test_neutral_displacement_is_zero(neutral_clip):
    face = synth.canonical_face()
    motion = synth.mouth_motion(neutral_clip.audio_content)
    residual = neutral_clip.landmarks - face.points.reshape(-1)[None, :] - motion
    assert not residual.any()
    assert not synth.oracle_displacement("neutral").any()


def test_emotion_fields_separated():
    fields = synth.emotion_fields()
    names = list(EMOTIONS)
    floor = synth.DEFAULT_SETTINGS.emotion_separation
    for i, a in enumerate(names):
        assert np.linalg.norm(fields[a]) <= synth.DEFAULT_SETTINGS.emotion_max_norm + 1e-6
        for b in names[i + 1:]:
            assert np.linalg.norm(fields[a] - fields[b]) >= floor


def test_happy_vs_sad_distinct():
    happy = synth.oracle_displacement("happy")
    sad = synth.oracle_displacement("sad")
    assert np.linalg.norm(happy - sad) >= synth.DEFAULT_SETTINGS.emotion_separation


def test_unknown_emotion_rejected():
    with pytest.raises(ValidationError) as err:
        synth.generate_clip(0, "bored", frames=2, resolution=32)
    assert "neutral" in str(err.value)  # message lists the valid labels
    with pytest.raises(ValidationError):
        synth.oracle_displacement("bored")


def test_bad_frame_and_resolution_rejected():
    with pytest.raises(ValidationError):
        synth.generate_clip(0, "happy", frames=0, resolution=32)
    with pytest.raises(ValidationError):
        synth.generate_clip(0, "happy", frames=2, resolution=48)


def test_rasterize_bit_identical(toy_clip):
    img1 = synth.rasterize(toy_clip.landmarks[0], toy_clip.rotations[0],
                           toy_clip.translations[0], toy_clip.intrinsics, 32)
    img2 = synth.rasterize(toy_clip.landmarks[0], toy_clip.rotations[0],
                           toy_clip.translations[0], toy_clip.intrinsics, 32)
    assert np.array_equal(img1, img2)
    assert img1.min() >= 0.0 and img1.max() <= 1.0


def test_sequence_lengths_agree(toy_clip):
    t = len(toy_clip)
    assert toy_clip.landmarks.shape == (t, LANDMARK_DIM)
    assert toy_clip.audio_content.shape[0] == t
    assert toy_clip.audio_pitch.shape[0] == t
    assert toy_clip.blendshapes.shape[0] == t
    assert toy_clip.rotations.shape == (t, 3, 3)


def test_mouth_motion_is_linear_readout(toy_clip):
    w = synth.readout_vector()
    basis = synth.mouth_basis()
    motion = synth.mouth_motion(toy_clip.audio_content)
    scalar = toy_clip.audio_content.astype(np.float64) @ w
    expected = synth._quantize(
        synth.DEFAULT_SETTINGS.mouth_amplitude * scalar[:, None] * basis[None, :].astype(np.float64))
    assert np.array_equal(motion, expected)
    # supported on mouth indices only
    mask = np.zeros((68, 3), dtype=bool)
    mask[list(MOUTH_INDICES)] = True
    assert not motion.reshape(-1, 68, 3)[:, ~mask.any(axis=1)].any()
