import numpy as np
import pytest
import torch

from talkinghead import synth


@pytest.fixture(scope="session")
def toy_clip():
    return synth.generate_clip(5, "happy", frames=24, resolution=32)


@pytest.fixture(scope="session")
def neutral_clip():
    return synth.generate_clip(6, "neutral", frames=10, resolution=32)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
