import pytest
import torch

from talkinghead.engine import (
    AdamOptimizer,
    AdamSettings,
    MissingGradientError,
    NonDeterministicForwardError,
    ParameterStore,
    adam_step,
    grad_check,
)


def _store(values):
    return ParameterStore({name: torch.nn.Parameter(v.clone()) for name, v in values.items()})


def test_zero_gradient_leaves_parameters():
    store = _store({"w": torch.randn(5)})
    before = store.params["w"].detach().clone()
    opt = AdamOptimizer(store)
    store.params["w"].grad = torch.zeros(5)
    adam_step(store, opt)
    assert torch.equal(store.params["w"].detach(), before)
    assert store.step_count == 1


def test_constant_gradient_moves_against_sign():
    store = _store({"w": torch.zeros(1)})
    opt = AdamOptimizer(store, AdamSettings(lr=1e-2))
    for _ in range(50):
        store.params["w"].grad = torch.tensor([2.0])
        adam_step(store, opt)
    assert float(store.params["w"].detach()) < 0.0


def test_lr_zero_is_identity():
    store = _store({"w": torch.randn(4)})
    before = store.params["w"].detach().clone()
    opt = AdamOptimizer(store, AdamSettings(lr=0.0))
    for _ in range(5):
        store.params["w"].grad = torch.randn(4)
        adam_step(store, opt)
    assert torch.equal(store.params["w"].detach(), before)


def test_missing_gradient_rejected():
    store = _store({"a": torch.randn(2), "b": torch.randn(2)})
    opt = AdamOptimizer(store)
    store.params["a"].grad = torch.randn(2)
    with pytest.raises(MissingGradientError) as err:
        adam_step(store, opt)
    assert "b" in str(err.value)


def test_quadratic_bowl_converges():
    torch.manual_seed(0)
    store = _store({"w": torch.randn(8)})
    opt = AdamOptimizer(store, AdamSettings(lr=1e-2))
    best = float("inf")
    for _ in range(2000):
        loss = (store.params["w"] ** 2).sum()
        loss.backward()
        adam_step(store, opt)
        best = min(best, float(store.params["w"].detach().norm()))
    assert best < 1e-3


def test_order_invariance():
    torch.manual_seed(1)
    w1 = torch.randn(3)
    w2 = torch.randn(3)
    g1, g2 = torch.randn(3), torch.randn(3)

    def run(order):
        store = _store(dict(order))
        opt = AdamOptimizer(store)
        for _ in range(3):
            store.params["a"].grad = g1.clone()
            store.params["b"].grad = g2.clone()
            adam_step(store, opt)
        return store.params["a"].detach(), store.params["b"].detach()

    fwd = run([("a", w1), ("b", w2)])
    rev_all = run([("b", w2), ("a", w1)])
    assert torch.equal(fwd[0], rev_all[0]) and torch.equal(fwd[1], rev_all[1])


def test_grad_check_linear_layer():
    torch.manual_seed(0)
    lin = torch.nn.Linear(6, 4).double()
    x = torch.randn(3, 6, dtype=torch.float64)
    report = grad_check(lambda: (lin(x) ** 2).sum(), dict(lin.named_parameters()),
                        tolerance=1e-5)
    assert report.passed
    assert report.max_rel_error < 1e-5


def test_grad_check_detects_nondeterminism():
    lin = torch.nn.Linear(3, 3).double()
    x = torch.randn(2, 3, dtype=torch.float64)

    def noisy():
        return (lin(x) ** 2).sum() + torch.rand(1, dtype=torch.float64)[0]

    with pytest.raises(NonDeterministicForwardError):
        grad_check(noisy, dict(lin.named_parameters()))
