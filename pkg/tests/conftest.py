import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy import ndimage as ndi

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def smooth_field(rng, dims, amplitude, sigma=3.0):
    """Random (3, *dims) field, Gaussian-smoothed, scaled so its largest component magnitude is ``amplitude``."""
    f = np.stack([ndi.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect") for _ in range(3)])
    return f * (amplitude / np.abs(f).max())


def smooth_image(dims, sigma=2.5, seed=0):
    rng = np.random.default_rng(seed)
    img = ndi.gaussian_filter(rng.standard_normal(dims), sigma, mode="reflect")
    return (img - img.min()) / (img.max() - img.min())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a criterion outcome as a PASS/FAIL line, then assert it."""

    def record(criterion, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
