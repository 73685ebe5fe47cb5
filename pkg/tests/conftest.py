import numpy as np
import pytest

from regibench.datagen import quantize, synth_test_image
from regibench.imagecore import ensure_gray, gaussian_blur

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def textured():
    """256x256 RGB synthetic test image, already on the 8-bit lattice."""
    return quantize(synth_test_image(11, 256))


@pytest.fixture(scope="session")
def textured_gray(textured):
    return ensure_gray(textured)


@pytest.fixture
def smooth_small():
    """Small smooth grayscale image for gradient and interpolation checks."""
    return gaussian_blur(ensure_gray(synth_test_image(3, 32)), 2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
