import numpy as np
import pytest

from launderkit import ImageBuffer


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def make_color_image(rng, height, width):
    return ImageBuffer(rng.random((height, width, 3)))


def make_gray_image(rng, height, width):
    return ImageBuffer(rng.random((height, width, 1)))


@pytest.fixture
def color_image(rng):
    return make_color_image(rng, 128, 160)
