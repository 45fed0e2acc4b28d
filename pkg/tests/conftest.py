import math

import numpy as np
import pytest

from skild.schedule import ScheduleSpec, build_tables
from skild.spectral import frequency_grid
from skild.spectrum import PowerLawParams, eval_power_law

CIFAR_PARAMS = PowerLawParams(C=0.9100, k0_sq=1.9406, a=1.0513)

# Linear schedule with the CIFAR shape, rescaled so its front starts at the
# highest diagonal mode of a 16x16 grid.
SMALL_LINEAR = ScheduleSpec("linear", lambda_i=math.sqrt(2) * math.pi * 15, lambda_f=1.57, theta=5.0, k_c=3.0, N=1000)
# Non-stiff schedule for the explicit SDE integrators (max k^2 lambda' dt < 1).
SMALL_LOGLIN = ScheduleSpec("log_linear", lambda_i=-3.5, lambda_f=-1.5, k_c=3.0, N=1000)


class ZeroNormal:
    """Generator stand-in whose normal draws are all zero."""

    def standard_normal(self, shape=None):
        return np.zeros(() if shape is None else shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid16():
    return frequency_grid(16, 16)


@pytest.fixture(scope="session")
def s0_16(grid16):
    return eval_power_law(CIFAR_PARAMS, grid16).values


@pytest.fixture(scope="session")
def tables16(grid16):
    return build_tables(SMALL_LINEAR, grid16)


def within_sigma(sample_var, true_var, n, k=5.0):
    """Per-mode check that a sample variance is within ``k`` standard errors."""
    se = true_var * math.sqrt(2.0 / (n - 1))
    return np.abs(sample_var - true_var) <= k * se


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split()[0])):
        terminalreporter.write_line(line)
