import hypothesis
import numpy as np
import pytest

from sdesync.schedule import ConstantOU, RectifiedFlow
from sdesync.scores import ConditionalGaussianFamily, ConditionalMixtureFamily

hypothesis.settings.register_profile(
    "deterministic", derandomize=True, max_examples=200)
hypothesis.settings.load_profile("deterministic")


@pytest.fixture
def ou():
    return ConstantOU(1.0, 1.0)


@pytest.fixture
def ou_driftless():
    return ConstantOU(0.0, 1.0)


@pytest.fixture
def rf128():
    return RectifiedFlow.for_steps(128)


@pytest.fixture
def std_normal_family():
    return ConditionalGaussianFamily({"c": ([0.0], 1.0)})


@pytest.fixture
def pair_family():
    return ConditionalGaussianFamily({"src": ([-2.0], 0.5), "tar": ([2.0], 0.5)})


@pytest.fixture
def mixture_family():
    return ConditionalMixtureFamily({
        "bimodal": [(0.5, [-1.5], 0.6), (0.5, [1.5], 0.6)],
        "skew": [(0.3, [-1.0], 0.4), (0.7, [2.0], 0.8)],
    })


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
