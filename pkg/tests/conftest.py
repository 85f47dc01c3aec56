import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def rand_image(rng):
    """A 48x48 random RGB image in [0, 1]."""
    return rng.uniform(0.0, 1.0, size=(48, 48, 3))


def make_images(rng, count, h=48, w=48):
    return [rng.uniform(0.0, 1.0, size=(h, w, 3)) for _ in range(count)]
