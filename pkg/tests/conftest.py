"""Shared oracles: the toy ABC posterior on a grid and a Kalman-filtered
linear-Gaussian state-space model."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from knnabc.calibration import Metric
from knnabc.diagnostics import act
from knnabc.models import GaussianToy


def toy_h(theta, y0, eps, a=1.0, noise=1.0, n=1):
    """P(a (ybar - y0)^2 < eps | theta) for ybar ~ N(theta, noise^2 / n)."""
    r = math.sqrt(eps / a)
    sd = noise / math.sqrt(n)
    theta = np.asarray(theta, dtype=float)
    return norm.cdf((y0 + r - theta) / sd) - norm.cdf((y0 - r - theta) / sd)


def toy_grid(y0, eps, low=-3.0, high=3.0, size=200_001):
    """Grid and normalized density of the uniform-prior toy ABC posterior."""
    grid = np.linspace(low, high, size)
    dens = toy_h(grid, y0, eps)
    return grid, dens / trapezoid(dens, grid)


def toy_posterior_mean(y0, eps, low=-3.0, high=3.0):
    grid, dens = toy_grid(y0, eps, low, high)
    return float(trapezoid(grid * dens, grid))


def mc_se(x):
    """Monte Carlo standard error of the mean of a correlated chain."""
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) * math.sqrt(act(x) / x.size))


@pytest.fixture
def toy():
    y0 = np.array([0.5])
    model = GaussianToy()
    return model, y0, Metric([[1.0]], y0)


class LinearGaussianHMM:
    """x_1 ~ N(0, s^2/(1-phi^2)), x_t = phi x_{t-1} + s v_t, y_t = x_t + tau w_t.

    theta = (phi, s, tau).
    """

    def initial_sample(self, theta, size, rng):
        phi, s, _ = theta
        return rng.normal(0.0, s / math.sqrt(1 - phi ** 2), size)

    def transition_sample(self, x, theta, rng):
        return theta[0] * x + theta[1] * rng.standard_normal(np.shape(x))

    def emission_logpdf(self, y, x, theta):
        tau = theta[2]
        return -0.5 * (math.log(2 * math.pi * tau ** 2) + (y - np.asarray(x)) ** 2 / tau ** 2)

    def simulate(self, theta, n, rng):
        x = self.initial_sample(theta, 1, rng)[0]
        y = np.empty(n)
        for t in range(n):
            if t:
                x = self.transition_sample(x, theta, rng)
            y[t] = x + theta[2] * rng.standard_normal()
        return y


def kalman_loglik(y, theta):
    """Exact log-likelihood of the linear-Gaussian model by the Kalman filter."""
    phi, s, tau = theta
    mean, var = 0.0, s ** 2 / (1 - phi ** 2)
    total = 0.0
    for t, yt in enumerate(y):
        if t:
            mean, var = phi * mean, phi ** 2 * var + s ** 2
        f = var + tau ** 2
        total += -0.5 * (math.log(2 * math.pi * f) + (yt - mean) ** 2 / f)
        gain = var / f
        mean, var = mean + gain * (yt - mean), (1 - gain) * var
    return total


# --- acceptance reporting -------------------------------------------------------

ACCEPTANCE = {}


def report(number, ok, detail):
    """Record one acceptance criterion's outcome and fail the test if it missed."""
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
