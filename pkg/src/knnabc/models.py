"""Benchmark generative models: simulators, priors and summary statistics.

Four models are provided (MA2, Ricker, SV with Gaussian emissions and SV with
alpha-stable emissions) plus a one-parameter Gaussian toy whose ABC
acceptance probability is available in closed form.  Each model exposes

* ``prior``: ``sample(rng)``, ``logpdf(theta)``, ``in_support(theta)``,
  ``mean``, ``cov``;
* ``simulate(theta, n, rng)`` and the batched ``simulate_many``;
* ``summarize(y, ref)`` and the batched ``summarize_many``.

MA2 additionally has :func:`ma2_exact_loglik`; Ricker and SV-Gaussian carry an
``hmm`` object with the transition/emission densities needed by the particle
filter.
"""

import csv
import math
from collections import namedtuple

import numpy as np
from scipy import linalg as sla
from scipy.signal import lfilter
from scipy.special import gammaln

from .rng import LOG_2PI, DomainError, NumericalError, sample_stable

# --- summary-statistic helpers ----------------------------------------------

OlsResult = namedtuple("OlsResult", ["coef", "rank", "rank_deficient"])


def ols_fit(design, response):
    """Least squares through a rank-revealing (SVD) factorization.

    Returns the minimum-norm solution; ``rank_deficient`` flags designs whose
    numerical rank is below the column count.
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if design.ndim != 2 or design.shape[0] < design.shape[1]:
        raise DomainError(f"design must have rows >= columns, got {design.shape}")
    coef, _, rank, _ = np.linalg.lstsq(design, response, rcond=None)
    return OlsResult(coef, int(rank), int(rank) < design.shape[1])


def _ols_or_zero(design, response):
    # rank-deficient fits keep the independent columns (pivoted QR) and
    # zero the coefficients of the dependent ones
    fit = ols_fit(design, response)
    if not fit.rank_deficient:
        return fit.coef
    coef = np.zeros(design.shape[1])
    if fit.rank == 0:
        return coef
    _, _, piv = sla.qr(design, mode="economic", pivoting=True)
    keep = np.sort(piv[:fit.rank])
    coef[keep] = np.linalg.lstsq(design[:, keep], response, rcond=None)[0]
    return coef


def autocorr(y, lag, with_flag=False):
    """Sample autocorrelation with the biased (full-sum) denominator.

    A zero-variance series has autocorrelation 0 at every lag; pass
    ``with_flag=True`` to also receive whether that convention was used.
    """
    y = np.asarray(y, dtype=float)
    if not 0 <= lag < y.size:
        raise DomainError(f"lag {lag} invalid for a series of length {y.size}")
    dev = y - y.mean()
    denom = float(dev @ dev)
    if denom == 0.0:
        return (0.0, True) if with_flag else 0.0
    value = float(dev[:y.size - lag] @ dev[lag:]) / denom
    return (value, False) if with_flag else value


def acf_rows(Y, lags):
    """Autocorrelations of each row of ``Y`` at ``lags``; constant rows give 0."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    if max(lags) >= n:
        raise DomainError(f"series of length {n} too short for lag {max(lags)}")
    dev = Y - Y.mean(axis=1, keepdims=True)
    denom = np.einsum("ij,ij->i", dev, dev)
    out = np.empty((Y.shape[0], len(lags)))
    for k, lag in enumerate(lags):
        out[:, k] = np.einsum("ij,ij->i", dev[:, :n - lag], dev[:, lag:])
    safe = denom > 0
    out[safe] /= denom[safe, None]
    out[~safe] = 0.0
    return out


def autocov_rows(Y, lags):
    """Biased sample autocovariances (divisor n) of each row."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    dev = Y - Y.mean(axis=1, keepdims=True)
    return np.stack([np.einsum("ij,ij->i", dev[:, :n - k], dev[:, k:]) / n for k in lags], axis=1)


# --- priors -----------------------------------------------------------------

class Normal:
    """Normal prior component parametrized by mean and variance."""

    def __init__(self, mean, var):
        self.mean, self.var = float(mean), float(var)

    def sample(self, rng, size=None):
        return rng.normal(self.mean, math.sqrt(self.var), size)

    def logpdf(self, x):
        return -0.5 * (LOG_2PI + math.log(self.var) + (x - self.mean) ** 2 / self.var)

    def contains(self, x):
        return bool(np.isfinite(x))


class Uniform:
    """Uniform prior component on the open interval (low, high)."""

    def __init__(self, low, high):
        self.low, self.high = float(low), float(high)
        self.mean = 0.5 * (self.low + self.high)
        self.var = (self.high - self.low) ** 2 / 12.0

    def sample(self, rng, size=None):
        return rng.uniform(self.low, self.high, size)

    def logpdf(self, x):
        return -math.log(self.high - self.low) if self.contains(x) else -math.inf

    def contains(self, x):
        return bool(self.low < x < self.high)


class IndependentPrior:
    """Product of independent scalar components."""

    def __init__(self, components):
        self.components = list(components)
        self.q = len(self.components)
        self.mean = np.array([c.mean for c in self.components])
        self.cov = np.diag([c.var for c in self.components])

    def sample(self, rng):
        while True:
            theta = np.array([c.sample(rng) for c in self.components])
            if self.in_support(theta):
                return theta

    def in_support(self, theta):
        return all(c.contains(t) for c, t in zip(self.components, theta))

    def logpdf(self, theta):
        if not self.in_support(theta):
            return -math.inf
        return float(sum(c.logpdf(t) for c, t in zip(self.components, theta)))


class PolygonPrior:
    """Uniform prior on a convex polygon (open set), sampled by box rejection."""

    def __init__(self, vertices, constraints):
        self.vertices = np.asarray(vertices, dtype=float)
        self._constraints = constraints
        self.q = 2
        self.lower = self.vertices.min(axis=0)
        self.upper = self.vertices.max(axis=0)
        self.area, self.mean, self.cov = _polygon_moments(self.vertices)
        self._log_density = -math.log(self.area)

    def in_support(self, theta):
        return bool(self._constraints(theta[0], theta[1]))

    def sample(self, rng):
        while True:
            theta = rng.uniform(self.lower, self.upper)
            if self.in_support(theta):
                return theta

    def logpdf(self, theta):
        return self._log_density if self.in_support(theta) else -math.inf


def _polygon_moments(vertices):
    """Area, mean and covariance of the uniform law on a convex polygon.

    Fan triangulation from the first vertex; a triangle with vertices a, b, c
    has E[x] = (a+b+c)/3 and E[x x^T] = (a a^T + b b^T + c c^T + s s^T)/12
    with s = a+b+c.
    """
    a = vertices[0]
    area = 0.0
    first = np.zeros(2)
    second = np.zeros((2, 2))
    for b, c in zip(vertices[1:-1], vertices[2:]):
        tri = 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        s = a + b + c
        area += tri
        first += tri * s / 3.0
        second += tri * (np.outer(a, a) + np.outer(b, b) + np.outer(c, c) + np.outer(s, s)) / 12.0
    mean = first / area
    return area, mean, second / area - np.outer(mean, mean)


# --- models -----------------------------------------------------------------

class Model:
    """Common interface; subclasses set ``name``, ``q``, ``p``, ``n_default``,
    ``truth``, ``prior`` and implement ``simulate_many``/``summarize_many``."""

    name = ""
    param_names = ()
    needs_ref = False
    hmm = None

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q,):
            raise DomainError(f"{self.name}: expected {self.q} parameters, got shape {theta.shape}")
        if not self.prior.in_support(theta):
            raise DomainError(f"{self.name}: theta={theta} outside the prior support")
        return theta

    def simulate(self, theta, n, rng):
        return self.simulate_many(theta, 1, n, rng)[0]

    def simulate_many(self, theta, m, n, rng):
        raise NotImplementedError

    def summarize(self, y, ref=None):
        return self.summarize_many(np.asarray(y, dtype=float)[None, :], ref)[0]

    def summarize_many(self, Y, ref=None):
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} q={self.q} p={self.p}>"


def _ma2_constraints(t1, t2):
    return t1 + t2 > -1 and t1 - t2 < 1 and -2 < t1 < 2 and -1 < t2 < 2


class MA2(Model):
    """Moving average of order 2 with unit Gaussian innovations.

    Summaries are the sample variance and the lag-1, lag-2 autocovariances.
    """

    name = "ma2"
    param_names = ("theta1", "theta2")
    q, p, n_default = 2, 3, 200
    truth = np.array([0.6, 0.6])

    def __init__(self):
        # vertices of {t1+t2>-1, t1-t2<1, -2<t1<2, -1<t2<2}, counter-clockwise
        self.prior = PolygonPrior([(0, -1), (2, 1), (2, 2), (-2, 2), (-2, 1)], _ma2_constraints)

    def simulate_many(self, theta, m, n, rng):
        t1, t2 = self.check(theta)
        z = rng.standard_normal((m, n + 2))
        return z[:, 2:] + t1 * z[:, 1:-1] + t2 * z[:, :-2]

    def summarize_many(self, Y, ref=None):
        return autocov_rows(Y, (0, 1, 2))


def ma2_banded_cov(theta, n):
    """Upper banded storage of the MA2 covariance for ``scipy.linalg`` banded routines."""
    t1, t2 = theta
    ab = np.zeros((3, n))
    ab[2, :] = 1.0 + t1 * t1 + t2 * t2
    ab[1, 1:] = t1 + t1 * t2
    ab[0, 2:] = t2
    return ab


def ma2_exact_loglik(theta, y):
    """Exact Gaussian log-likelihood of an MA2 series via a banded Cholesky."""
    y = np.asarray(y, dtype=float)
    n = y.size
    ab = ma2_banded_cov(theta, n)
    try:
        chol = sla.cholesky_banded(ab, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"MA2 covariance not positive definite at theta={theta}") from exc
    solved = sla.cho_solve_banded((chol, False), y, check_finite=False)
    logdet = 2.0 * np.sum(np.log(chol[-1]))
    return float(-0.5 * (n * LOG_2PI + logdet + y @ solved))


class RickerHMM:
    """Transition sampler and Poisson emission density for the Ricker model."""

    burn = 50

    def initial_sample(self, theta, size, rng):
        x = np.ones(size)
        for _ in range(self.burn):
            x = self.transition_sample(x, theta, rng)
        return x

    def transition_sample(self, x, theta, rng):
        z = rng.normal(0.0, math.exp(theta[1]), np.shape(x))
        return math.exp(math.exp(theta[0])) * x * np.exp(-x + z)

    def emission_logpdf(self, y, x, theta):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise DomainError("Ricker emission needs a non-negative hidden state")
        lam = math.exp(theta[2]) * x
        with np.errstate(divide="ignore", invalid="ignore"):
            out = y * np.log(lam) - lam - gammaln(y + 1.0)
        if y == 0:
            out = np.where(lam == 0, 0.0, out)
        return out


class Ricker(Model):
    """Ricker population model observed through Poisson counts.

    The first 50 latent states (from ``x_{-49} = 1``) are discarded.
    Summaries: number of zeros, mean, autocorrelations at lags 1-5, the four
    coefficients of the cubic regression of ``y_i - y_{i-1}`` on
    ``y_i, y_i^2, y_i^3`` and the three of ``y_i^0.3`` on
    ``y_{i-1}^0.3, y_{i-1}^0.6``.
    """

    name = "ricker"
    param_names = ("log_log_r", "log_sigma", "log_phi")
    q, p, n_default = 3, 14, 100
    truth = np.array([math.log(3.8), math.log(0.3), 2.3])
    hmm = RickerHMM()

    def __init__(self):
        self.prior = IndependentPrior([Normal(0, 1), Uniform(-2.3, 0), Normal(0, 4)])

    def simulate_many(self, theta, m, n, rng):
        theta = self.check(theta)
        r = math.exp(math.exp(theta[0]))
        sigma = math.exp(theta[1])
        burn = RickerHMM.burn
        z = rng.normal(0.0, sigma, (burn + n - 1, m))
        x = np.ones(m)
        kept = np.empty((n, m))
        for i in range(burn + n - 1):
            x = r * x * np.exp(-x + z[i])
            if i >= burn - 1:
                kept[i - burn + 1] = x
        return rng.poisson(math.exp(theta[2]) * kept.T).astype(float)

    def summarize_many(self, Y, ref=None):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.empty((Y.shape[0], self.p))
        out[:, 0] = np.sum(Y == 0, axis=1)
        out[:, 1] = Y.mean(axis=1)
        out[:, 2:7] = acf_rows(Y, (1, 2, 3, 4, 5))
        for k, y in enumerate(Y):
            cur, prev = y[1:], y[:-1]
            cubic = np.column_stack([np.ones_like(cur), cur, cur ** 2, cur ** 3])
            out[k, 7:11] = _ols_or_zero(cubic, cur - prev)
            root_prev = prev ** 0.3
            quad = np.column_stack([np.ones_like(prev), root_prev, root_prev ** 2])
            out[k, 11:14] = _ols_or_zero(quad, cur ** 0.3)
        return out


class SVGaussianHMM:
    """AR(1) log-volatility transitions and Gaussian emissions."""

    def initial_sample(self, theta, size, rng):
        return rng.normal(0.0, 1.0 / math.sqrt(1.0 - theta[0] ** 2), size)

    def transition_sample(self, x, theta, rng):
        return theta[0] * x + rng.standard_normal(np.shape(x))

    def emission_logpdf(self, y, x, theta):
        log_var = theta[1] + math.exp(theta[2]) * np.asarray(x, dtype=float)
        return -0.5 * (LOG_2PI + log_var + y * y * np.exp(-log_var))


def sv_summaries(Y, ref):
    """Seven volatility summaries; ``ref`` is the observed series y0.

    C1 counts exceedances of the 0.99 quantile of y0^2, C2/C3 are the mean and
    standard deviation of y^2, C4 sums autocorrelations 1-5 of y^2 and C5-C7
    sum autocorrelations 1-5 of the indicators y^2 < quantile(y^2, tau) for
    tau = 0.1, 0.5, 0.9.
    """
    if ref is None:
        raise DomainError("SV summaries need the observed series as reference")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    sq = Y * Y
    ref = np.asarray(ref, dtype=float)
    threshold = np.quantile(ref * ref, 0.99)
    lags = (1, 2, 3, 4, 5)
    out = np.empty((Y.shape[0], 7))
    out[:, 0] = np.sum(sq > threshold, axis=1)
    out[:, 1] = sq.mean(axis=1)
    out[:, 2] = sq.std(axis=1, ddof=1)
    out[:, 3] = acf_rows(sq, lags).sum(axis=1)
    quants = np.quantile(sq, (0.1, 0.5, 0.9), axis=1)
    for k in range(3):
        indicator = (sq < quants[k][:, None]).astype(float)
        out[:, 4 + k] = acf_rows(indicator, lags).sum(axis=1)
    return out


class _SVBase(Model):
    needs_ref = True
    p = 7
    n_default = 500

    def _log_vol(self, theta, m, n, rng):
        # x_1 ~ N(0, 1/(1-theta1^2)), x_i = theta1 x_{i-1} + v_i
        v = rng.standard_normal((m, n))
        v[:, 0] /= math.sqrt(1.0 - theta[0] ** 2)
        return lfilter([1.0], [1.0, -theta[0]], v, axis=1)

    def summarize_many(self, Y, ref=None):
        return sv_summaries(Y, ref)


class SVGaussian(_SVBase):
    """Stochastic volatility with Gaussian emission noise."""

    name = "svg"
    param_names = ("phi", "log_scale", "log_vol_scale")
    q = 3
    truth = np.array([0.95, -2.0, -1.0])
    hmm = SVGaussianHMM()

    def __init__(self):
        self.prior = IndependentPrior([Uniform(0, 1), Normal(0, 1), Normal(0, 1)])

    def simulate_many(self, theta, m, n, rng):
        theta = self.check(theta)
        x = self._log_vol(theta, m, n, rng)
        w = rng.standard_normal((m, n))
        return np.exp(0.5 * (theta[1] + math.exp(theta[2]) * x)) * w


class SVStable(_SVBase):
    """Stochastic volatility with alpha-stable emissions of skewness -1."""

    name = "svs"
    param_names = ("phi", "log_scale", "log_vol_scale", "alpha")
    q = 4
    truth = np.array([0.95, -2.0, -1.0, 1.8])
    skew = -1.0

    def __init__(self):
        self.prior = IndependentPrior([Uniform(0, 1), Normal(0, 1), Normal(0, 1), Uniform(1.5, 2)])

    def simulate_many(self, theta, m, n, rng):
        theta = self.check(theta)
        x = self._log_vol(theta, m, n, rng)
        w = sample_stable(theta[3], self.skew, rng, (m, n))
        return np.exp(0.5 * (theta[1] + math.exp(theta[2]) * x)) * w


class GaussianToy(Model):
    """One-parameter toy: y ~ N(theta, noise^2), summary = mean(y).

    With a quadratic discrepancy ``a (s - s0)^2`` the ABC acceptance
    probability is ``Phi((s0 + r - theta)/sd) - Phi((s0 - r - theta)/sd)``
    with ``r = sqrt(eps / a)`` and ``sd = noise / sqrt(n)``.
    """

    name = "toy"
    param_names = ("theta",)
    q, p, n_default = 1, 1, 1
    truth = np.array([0.0])

    def __init__(self, low=-3.0, high=3.0, noise=1.0, prior="uniform"):
        self.noise = float(noise)
        if prior == "uniform":
            self.prior = IndependentPrior([Uniform(low, high)])
        elif prior == "normal":
            # low/high read as mean and standard deviation
            self.prior = IndependentPrior([Normal(low, high ** 2)])
        else:
            raise DomainError(f"unknown toy prior {prior!r}")

    def simulate_many(self, theta, m, n, rng):
        theta = self.check(theta)
        return theta[0] + self.noise * rng.standard_normal((m, n))

    def summarize_many(self, Y, ref=None):
        return np.atleast_2d(np.asarray(Y, dtype=float)).mean(axis=1, keepdims=True)


MODELS = {cls.name: cls for cls in (MA2, Ricker, SVGaussian, SVStable, GaussianToy)}


def get_model(name):
    try:
        return MODELS[name]()
    except KeyError:
        raise DomainError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# --- file formats -----------------------------------------------------------

def write_dataset(path, y):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"])
        writer.writerows([[repr(float(v))] for v in y])


def read_dataset(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        if "y" not in header:
            raise DomainError(f"{path}: expected a column with header 'y', got {header}")
        col = header.index("y")
        y = np.array([float(row[col]) for row in reader if row])
    if y.size == 0 or not np.all(np.isfinite(y)):
        raise DomainError(f"{path}: dataset must be non-empty and finite")
    return y


def write_summary(path, s):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"s{k + 1}" for k in range(len(s))])
        writer.writerow([repr(float(v)) for v in s])
