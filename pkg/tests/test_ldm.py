import numpy as np
import pytest
import torch

from talkinghead.core import ValidationError
from talkinghead.ldm import (
    LandmarkDeformer,
    apply_deformation,
    build_toy_pairs,
    deform_sequence,
    ldm_loss,
)
from talkinghead.synth import QUANTUM


@pytest.fixture(scope="module")
def deformer():
    torch.manual_seed(0)
    return LandmarkDeformer(hidden=64)


def test_embedding_is_16_dim(deformer):
    emb = deformer.embed_emotion(torch.tensor([0, 3, 7]))
    assert emb.shape == (3, 16)


def test_concatenated_width_is_220(deformer):
    # one token: landmark 204 plus embedding 16
    assert deformer.backbone_fc.in_features == 220


def test_unknown_code_rejected(deformer):
    with pytest.raises(ValidationError):
        deformer.embed_emotion(torch.tensor([8]))


def test_eval_forward_deterministic(deformer):
    deformer.eval()
    lm = torch.randn(2, 4, 204) * 0.2
    codes = torch.tensor([1, 2])
    a = deformer(lm, codes)
    b = deformer(lm, codes)
    assert torch.equal(a, b)


def test_train_mode_dropout_varies():
    torch.manual_seed(1)
    model = LandmarkDeformer(hidden=64)
    model.train()
    lm = torch.randn(2, 4, 204)
    codes = torch.tensor([0, 1])
    a = model(lm, codes)
    b = model(lm, codes)
    assert not torch.equal(a, b)


def test_attention_rows_are_distributions(deformer):
    deformer.eval()
    lm = torch.randn(3, 6, 204) * 0.3
    _, attn = deformer(lm, torch.tensor([0, 4, 7]), return_attention=True)
    assert attn.shape == (3, 4, 6, 6)
    sums = attn.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
    assert bool((attn >= 0).all())


def test_zero_final_layer_gives_zero_displacement():
    torch.manual_seed(2)
    model = LandmarkDeformer(hidden=64).eval()
    with torch.no_grad():
        model.head.weight.zero_()
        model.head.bias.zero_()
    out = model(torch.randn(2, 5, 204), torch.tensor([3, 6]))
    assert not bool(out.detach().abs().any())


def test_apply_deformation_zero_identity(rng):
    lm = rng.normal(size=(4, 204)).astype(np.float32)
    d = rng.normal(size=(4, 204)).astype(np.float32)
    out = apply_deformation(lm, d, 0.0)
    assert np.array_equal(out, lm)


def test_apply_deformation_exactly_linear(rng):
    lm = (np.round(rng.normal(0, 0.3, (4, 204)) / QUANTUM) * QUANTUM).astype(np.float32)
    d = (np.round(rng.normal(0, 0.1, (4, 204)) / QUANTUM) * QUANTUM).astype(np.float32)
    n1 = np.linalg.norm(apply_deformation(lm, d, 0.25) - lm)
    n2 = np.linalg.norm(apply_deformation(lm, d, 0.5) - lm)
    assert n2 == 2.0 * n1


def test_apply_deformation_rejects_negative_and_mismatch(rng):
    lm = rng.normal(size=(4, 204)).astype(np.float32)
    with pytest.raises(ValidationError):
        apply_deformation(lm, lm, -0.1)
    with pytest.raises(ValidationError):
        apply_deformation(lm, lm[:2], 0.5)


def test_ldm_loss_values(rng):
    x = rng.normal(size=(3, 204)).astype(np.float32)
    assert float(ldm_loss(x, x)) == 0.0
    assert float(ldm_loss(x + 1.0, x)) == pytest.approx(1.0, rel=1e-6)
    y = rng.normal(size=(3, 204)).astype(np.float32)
    expected = float(np.mean((x - y) ** 2))
    assert float(ldm_loss(x, y)) == pytest.approx(expected, rel=1e-6)


def test_build_toy_pairs_structure():
    pairs = build_toy_pairs(clips_per_emotion=1, frames=16, window=8, seed=0)
    assert len(pairs) == 8 * 2  # 8 emotions x 2 windows per clip
    assert pairs.neutral.shape[1:] == (8, 204)
    # neutral windows really are neutral: recomposing gives the emotional oracle
    assert np.allclose(pairs.oracle[pairs.codes == 5], 0.0)  # neutral code


def test_deform_sequence_window_chunks(deformer):
    deformer.eval()
    lm = np.random.default_rng(1).normal(0, 0.2, (11, 204)).astype(np.float32)
    out = deform_sequence(deformer, lm, "happy", 0.0, window=4)
    assert np.array_equal(out, lm)  # magnitude 0 stays the identity across chunks
    out2 = deform_sequence(deformer, lm, "happy", 0.3, window=4)
    assert out2.shape == lm.shape and not np.array_equal(out2, lm)
