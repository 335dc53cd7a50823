import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from talkinghead.core import NonFiniteError, ShapeMismatchError, ValidationError
from talkinghead.flow import FlowPrior
from talkinghead.sync import SyncScorer, sync_loss, sync_score
from talkinghead.vae import (
    MotionVae,
    VaeDecoder,
    VaeEncoder,
    kl_standard_normal,
    monte_carlo_kl,
    vae_loss,
)


def _scorer():
    torch.manual_seed(0)
    return SyncScorer(window=5, audio_dim=6, landmark_dim=12, hidden=16, embed=8)


class TestSyncScore:
    def test_identical_windows_score_one(self):
        scorer = _scorer()
        w = torch.randn(1, 5, 6)
        # force both embedders to the same function of the same input
        scorer.landmark_net = scorer.audio_net
        s = sync_score(scorer, w, w)
        assert float(s) == pytest.approx(1.0, abs=1e-6)

    def test_scale_invariance(self):
        scorer = _scorer()
        a = torch.randn(3, 5, 6)
        l = torch.randn(3, 5, 12)
        s1 = sync_score(scorer, a, l)
        with torch.no_grad():
            scorer.audio_net.net[-1].weight.mul_(10.0)
            scorer.audio_net.net[-1].bias.mul_(10.0)
        s2 = sync_score(scorer, a, l)
        assert torch.allclose(s1, s2, atol=1e-5)

    def test_orthogonal_embeddings_score_zero(self):
        scorer = _scorer()

        class Fixed(torch.nn.Module):
            def __init__(self, vec):
                super().__init__()
                self.vec = vec

            def forward(self, w):
                return self.vec.expand(np.atleast_3d(w).shape[0] if w.ndim == 3 else 1, -1)

        scorer.audio_net = Fixed(torch.tensor([[1.0, 0.0]]))
        scorer.landmark_net = Fixed(torch.tensor([[0.0, 1.0]]))
        s = sync_score(scorer, torch.zeros(1, 5, 6), torch.zeros(1, 5, 12))
        assert float(s) == pytest.approx(0.0, abs=1e-7)

    def test_range_bounded(self):
        scorer = _scorer()
        for seed in range(5):
            g = torch.Generator().manual_seed(seed)
            s = sync_score(scorer, torch.randn(8, 5, 6, generator=g),
                           torch.randn(8, 5, 12, generator=g))
            assert float(s.abs().max()) <= 1.0 + 1e-6

    def test_zero_norm_rejected(self):
        scorer = _scorer()
        with torch.no_grad():
            for p in scorer.audio_net.parameters():
                p.zero_()
        with pytest.raises(ValidationError):
            sync_score(scorer, torch.zeros(1, 5, 6), torch.randn(1, 5, 12))


class TestSyncLoss:
    def test_half_probability(self):
        # score 0 maps to p = 0.5 -> log 2
        assert float(sync_loss(torch.tensor([0.0]), torch.tensor([1.0]))) == \
            pytest.approx(math.log(2.0), abs=1e-6)

    def test_confident_correct_goes_to_zero(self):
        assert float(sync_loss(torch.tensor([0.999999]), torch.tensor([1.0]))) < 1e-5

    def test_confident_wrong_clamped_finite(self):
        value = float(sync_loss(torch.tensor([1.0]), torch.tensor([0.0])))
        assert math.isfinite(value) and value > 10.0

    def test_bad_label_rejected(self):
        with pytest.raises(ValidationError):
            sync_loss(torch.tensor([0.5]), torch.tensor([0.3]))


class TestVaeEncoderDecoder:
    def _model(self):
        torch.manual_seed(1)
        return MotionVae(6, 3, channels=8, latent_dim=4, width=16)

    def test_sigma_strictly_positive(self):
        enc = VaeEncoder(cond_dim=8, latent_dim=4, width=16)
        for seed in range(4):
            g = torch.Generator().manual_seed(seed)
            lm = torch.randn(6, 204, generator=g) * 5
            cond = torch.randn(6, 8, generator=g)
            _, sigma = enc(lm, cond)
            assert bool((sigma > 0).all())

    def test_t1_shapes(self):
        enc = VaeEncoder(cond_dim=8, latent_dim=4, width=16)
        mu, sigma = enc(torch.randn(1, 204), torch.randn(1, 8))
        assert mu.shape == (1, 4) and sigma.shape == (1, 4)

    def test_length_mismatch_rejected(self):
        enc = VaeEncoder(cond_dim=8, latent_dim=4, width=16)
        with pytest.raises(ShapeMismatchError):
            enc(torch.randn(5, 204), torch.randn(4, 8))

    def test_encoder_shift_equivariance(self):
        torch.manual_seed(2)
        enc = VaeEncoder(cond_dim=8, latent_dim=4, width=16).eval()
        t, shift = 80, 2
        lm = torch.randn(t, 204)
        cond = torch.randn(t, 8)
        mu1, _ = enc(lm, cond)
        mu2, _ = enc(torch.roll(lm, shift, 0), torch.roll(cond, shift, 0))
        pad = 35  # receptive-field half width plus the shift
        assert torch.allclose(mu1[pad:t - pad], mu2[pad + shift:t - pad + shift], atol=1e-5)

    def test_decoder_deterministic_and_shapes(self):
        dec = VaeDecoder(cond_dim=8, latent_dim=4, width=16).eval()
        z = torch.randn(5, 4)
        cond = torch.randn(5, 8)
        out1 = dec(z, cond)
        out2 = dec(z, cond)
        assert torch.equal(out1, out2)
        assert out1.shape == (5, 204)

    def test_decoder_depends_on_latent(self):
        torch.manual_seed(3)
        dec = VaeDecoder(cond_dim=8, latent_dim=4, width=16).eval()
        cond = torch.randn(5, 8)
        a = dec(torch.randn(5, 4), cond)
        b = dec(torch.randn(5, 4), cond)
        assert not torch.allclose(a, b)


class TestVaeLoss:
    def test_matched_distributions_zero_terms(self):
        prior = FlowPrior(4, 2)  # identity init: exact standard normal
        lm = torch.randn(6, 204)
        z = torch.randn(6, 4)
        total, br = vae_loss(lm, lm, torch.zeros(6, 4), torch.ones(6, 4), z, prior)
        assert br["recon"] == 0.0
        assert abs(br["kl"]) < 1e-5  # single-sample score of q against itself
        assert br["sync"] == 0.0

    def test_closed_form_zero(self):
        assert float(kl_standard_normal(torch.zeros(1, 4), torch.ones(1, 4))) == 0.0

    def test_monte_carlo_matches_closed_form(self):
        torch.manual_seed(4)
        prior = FlowPrior(4, 2)
        gen = torch.Generator().manual_seed(5)
        for _ in range(3):
            mu = torch.rand(4, generator=gen) * 4 - 2
            sigma = torch.rand(4, generator=gen) * 1.5 + 0.5
            closed = float(kl_standard_normal(mu, sigma))
            mc = monte_carlo_kl(mu, sigma, prior, 100_000, gen)
            assert abs(mc - closed) / closed < 0.02

    def test_breakdown_sums_to_total(self):
        torch.manual_seed(6)
        prior = FlowPrior(4, 2)
        lm = torch.randn(5, 204)
        rec = torch.randn(5, 204)
        mu, sigma = torch.randn(5, 4), torch.rand(5, 4) + 0.5
        z = mu + sigma * torch.randn(5, 4)
        scores = torch.rand(6) * 1.8 - 0.9
        labels = torch.tensor([1.0, 0, 1, 0, 1, 0])
        total, br = vae_loss(lm, rec, mu, sigma, z, prior, scores, labels)
        assert abs(br["recon"] + br["kl"] + br["sync"] - br["total"]) < 1e-6
        assert float(total.detach()) == pytest.approx(br["total"], rel=1e-6)

    def test_non_finite_term_rejected(self):
        prior = FlowPrior(4, 2)
        lm = torch.randn(3, 204)
        bad = lm.clone()
        bad[0, 0] = float("inf")
        with pytest.raises(NonFiniteError) as err:
            vae_loss(lm, bad, torch.zeros(3, 4), torch.ones(3, 4), torch.zeros(3, 4), prior)
        assert err.value.stage == "recon"


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_sync_score_always_in_range(seed):
    scorer = _scorer()
    g = torch.Generator().manual_seed(seed)
    s = sync_score(scorer, torch.randn(4, 5, 6, generator=g),
                   torch.randn(4, 5, 12, generator=g))
    assert bool((s.abs() <= 1.0 + 1e-6).all())
