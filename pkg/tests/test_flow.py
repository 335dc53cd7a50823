import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from talkinghead.core import NonFiniteError
from talkinghead.flow import AffineCoupling, FlowPrior


def _perturbed(dim, steps, seed, noise=0.05):
    torch.manual_seed(seed)
    flow = FlowPrior(dim, steps)
    with torch.no_grad():
        for p in flow.parameters():
            p.add_(torch.randn_like(p) * noise)
    return flow


def test_identity_initialization():
    flow = FlowPrior(16, 4)
    z = torch.randn(32, 16)
    u, log_det = flow(z)
    assert torch.equal(u, z)
    assert float(log_det.detach().abs().max()) == 0.0


def test_round_trip_1000_latents():
    flow = _perturbed(16, 4, seed=0)
    z = torch.randn(1000, 16)
    u, _ = flow(z)
    back = flow.inverse(u)
    assert float((z - back).detach().abs().max()) < 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_round_trip_property(seed):
    flow = _perturbed(8, 3, seed=4)
    z = torch.randn(16, 8, generator=torch.Generator().manual_seed(seed))
    back = flow.inverse(flow(z)[0])
    assert float((z - back).detach().abs().max()) < 1e-5


@pytest.mark.parametrize("dim", [4, 6])
def test_log_det_matches_dense_jacobian(dim):
    flow = _perturbed(dim, 4, seed=1).double()
    z0 = torch.randn(1, dim, dtype=torch.float64)
    jac = torch.autograd.functional.jacobian(lambda v: flow(v)[0], z0).reshape(dim, dim)
    _, log_det = flow(z0)
    assert abs(float(log_det.detach()[0]) - float(torch.slogdet(jac)[1])) < 1e-4


def test_log_prob_standard_normal_at_identity():
    flow = FlowPrior(4, 2)
    z = torch.randn(64, 4)
    expected = -0.5 * (z ** 2).sum(1) - 2.0 * np.log(2 * np.pi)
    assert torch.allclose(flow.log_prob(z), expected, atol=1e-5)


def test_non_finite_rejected_with_step_index():
    flow = _perturbed(4, 2, seed=2)
    z = torch.full((1, 4), float("nan"))
    with pytest.raises(NonFiniteError):
        flow(z)
    with torch.no_grad():
        flow.layers[3].log_scale.fill_(1000.0)  # second step's actnorm overflows
    with pytest.raises(NonFiniteError) as err:
        flow(torch.randn(4, 4) * 100)
    assert "step" in str(err.value)


def test_sampling_deterministic_per_seed():
    flow = _perturbed(8, 2, seed=3)
    a = flow.sample(5, torch.Generator().manual_seed(9))
    b = flow.sample(5, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)


def test_coupling_zero_init_is_identity():
    coupling = AffineCoupling(6, flip=False)
    z = torch.randn(10, 6)
    u, log_det = coupling(z)
    assert torch.equal(u, z)
    assert float(log_det.detach().abs().max()) == 0.0
