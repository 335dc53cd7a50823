import numpy as np
import pytest
import torch

from talkinghead.audio import (
    AudioEncoder,
    AudioFeatureSequence,
    concat_encodings,
    encode_audio,
    split_encodings,
)
from talkinghead.core import ShapeMismatchError, ValidationError


def _features(t=12, da=6, dp=3, rng_seed=0):
    rng = np.random.default_rng(rng_seed)
    return AudioFeatureSequence(rng.normal(size=(t, da)).astype(np.float32),
                                rng.normal(size=(t, dp)).astype(np.float32))


def test_nan_input_rejected():
    content = np.zeros((4, 6), dtype=np.float32)
    content[1, 2] = np.nan
    with pytest.raises(ValidationError):
        AudioFeatureSequence(content, np.zeros((4, 3), dtype=np.float32))


def test_length_mismatch_rejected():
    with pytest.raises(ShapeMismatchError):
        AudioFeatureSequence(np.zeros((4, 6), dtype=np.float32),
                             np.zeros((5, 3), dtype=np.float32))


def test_shape_contract_t1():
    enc = AudioEncoder(6, 3, channels=8).eval()
    h, p = encode_audio(_features(t=1), enc)
    assert h.shape == (1, 8) and p.shape == (1, 8)


def test_zero_input_matches_closed_form():
    """Zero input: conv1 emits its bias, BN (eval, identity affine) passes it,
    GeLU then conv2 give a closed-form constant away from the boundaries."""
    torch.manual_seed(3)
    enc = AudioEncoder(6, 3, channels=8).eval()
    stream = enc.content
    t = 9
    h, _ = encode_audio(_features(t=t, rng_seed=1), enc)  # warm call, unrelated values
    zero = AudioFeatureSequence(np.zeros((t, 6), dtype=np.float32),
                                np.zeros((t, 3), dtype=np.float32))
    out, _ = encode_audio(zero, enc)

    b1 = stream.conv1.bias.detach()
    gelu_b1 = torch.nn.functional.gelu(b1)
    w2 = stream.conv2.weight.detach()  # (C, C, 3)
    b2 = stream.conv2.bias.detach()
    interior = w2.sum(dim=2) @ gelu_b1 + b2
    for tt in range(1, t - 1):
        assert torch.allclose(out[tt], interior, atol=1e-6)
    edge_first = w2[:, :, 1:].sum(dim=2) @ gelu_b1 + b2  # left zero pad drops one tap
    assert torch.allclose(out[0], edge_first, atol=1e-6)


def test_zero_padded_extra_features_unchanged():
    torch.manual_seed(0)
    enc = AudioEncoder(6, 3, channels=8).eval()
    feats = _features(t=10)
    h, _ = encode_audio(feats, enc)

    wide = AudioEncoder(12, 3, channels=8).eval()
    with torch.no_grad():
        wide.content.conv1.weight.zero_()
        wide.content.conv1.weight[:, :6] = enc.content.conv1.weight
        wide.content.conv1.bias.copy_(enc.content.conv1.bias)
        wide.content.conv2.load_state_dict(enc.content.conv2.state_dict())
        wide.content.bn.load_state_dict(enc.content.bn.state_dict())
        wide.pitch.load_state_dict(enc.pitch.state_dict())
    padded = AudioFeatureSequence(
        np.concatenate([feats.content, np.zeros((10, 6), dtype=np.float32)], axis=1),
        feats.pitch)
    h2, _ = encode_audio(padded, wide)
    assert torch.allclose(h, h2, atol=1e-6)


def test_shift_equivariance_away_from_boundaries():
    torch.manual_seed(1)
    enc = AudioEncoder(6, 3, channels=8).eval()
    feats = _features(t=40)
    h, _ = encode_audio(feats, enc)
    shift = 3
    shifted = AudioFeatureSequence(np.roll(feats.content, shift, axis=0),
                                   np.roll(feats.pitch, shift, axis=0))
    h2, _ = encode_audio(shifted, enc)
    # interior: output shifts with the input (conv kernel reach is 2 frames)
    pad = shift + 2
    assert torch.allclose(h[pad:-pad], h2[pad + shift:40 - pad + shift], atol=1e-5)


def test_concat_encodings():
    h = torch.zeros(4, 3)
    p = torch.ones(4, 3)
    combined = concat_encodings(h, p)
    assert combined.shape == (4, 6)
    assert torch.equal(combined[:, :3], h) and torch.equal(combined[:, 3:], p)
    back_h, back_p = split_encodings(combined, 3)
    assert torch.equal(back_h, h) and torch.equal(back_p, p)
    with pytest.raises(ShapeMismatchError):
        concat_encodings(torch.zeros(4, 3), torch.zeros(5, 3))


def test_random_shapes():
    enc = AudioEncoder(6, 3, channels=4).eval()
    h, p = encode_audio(_features(t=2), enc)
    assert concat_encodings(h, p).shape == (2, 8)


def test_eval_mode_deterministic():
    enc = AudioEncoder(6, 3, channels=8).eval()
    feats = _features(t=7)
    h1, p1 = encode_audio(feats, enc)
    h2, p2 = encode_audio(feats, enc)
    assert torch.equal(h1, h2) and torch.equal(p1, p2)
