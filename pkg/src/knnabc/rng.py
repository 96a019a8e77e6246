"""Random streams and the elementary distributions used by models and samplers.

Every consumer receives a :class:`numpy.random.Generator`.  Reproducible,
independent sub-streams come from :func:`stream`, which keys a
``SeedSequence`` on ``(seed, stream_id)``.  The stream ids used across the
package are:

=========  ==  ===========================================
CHAIN      0   proposals and MH uniforms
HISTORY    1   dual (history-enriching) proposals
MODEL      2   simulator noise
DATA       3   observed-data generation in studies
CALIB      4   metric and tolerance calibration (CLI)
=========  ==  ===========================================
"""

import math

import numpy as np
from scipy.linalg import solve_triangular

CHAIN, HISTORY, MODEL, DATA, CALIB = 0, 1, 2, 3, 4

LOG_2PI = math.log(2.0 * math.pi)

# jitter escalation: 1e-10 * mean(diag), x10 per attempt, capped at 1e-4 * mean(diag)
_JITTER_STOP = 1e-4
_JITTER_LEVELS = tuple(10.0 ** k for k in range(-10, -3))


class DomainError(ValueError):
    """A parameter lies outside the domain of a distribution or model."""


class NumericalError(ArithmeticError):
    """A matrix could not be factorized even after jitter escalation."""

    def __init__(self, message, matrix=None):
        super().__init__(message)
        self.matrix = matrix


def stream(seed, stream_id=0):
    """Return the generator for sub-stream ``stream_id`` of ``seed``.

    Identical ``(seed, stream_id)`` pairs replay identical draws; distinct
    stream ids are statistically independent (``SeedSequence`` spawn keys).
    """
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng):
    """Accept an integer seed or a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return stream(int(rng), CHAIN)


def spawn(rng, n):
    """Split ``rng`` into ``n`` independent child generators."""
    return as_generator(rng).spawn(n)


# --- scalar laws ------------------------------------------------------------

def gaussian(rng, mu=0.0, sigma=1.0, size=None):
    if not sigma > 0:
        raise DomainError(f"gaussian sigma must be > 0, got {sigma}")
    return rng.normal(mu, sigma, size)


def uniform(rng, a=0.0, b=1.0, size=None):
    """Draws on ``[a, b)``."""
    if not a < b:
        raise DomainError(f"uniform needs a < b, got ({a}, {b})")
    return rng.uniform(a, b, size)


def poisson(rng, lam, size=None):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(~(lam_arr >= 0)):
        raise DomainError(f"poisson rate must be >= 0, got {lam}")
    return rng.poisson(lam_arr, size)


_SCALAR_LAWS = {"gaussian": gaussian, "uniform": uniform, "poisson": poisson}


def scalar_draw(kind, *params, rng):
    """One variate from ``kind`` in {'gaussian', 'uniform', 'poisson'}."""
    try:
        law = _SCALAR_LAWS[kind]
    except KeyError:
        raise DomainError(f"unknown law {kind!r}") from None
    return law(rng, *params)


def sample_stable(alpha, beta, rng, size=None):
    """Standard alpha-stable variates by the Chambers-Mallows-Stuck transform.

    Uses the 1-parametrization (unit scale, zero location): ``alpha=2``
    gives N(0, 2) and ``alpha=1, beta=0`` gives the standard Cauchy law.

    Parameters
    ----------
    alpha : float
        Stability index in (0, 2].
    beta : float
        Skewness in [-1, 1].
    rng : numpy.random.Generator
    size : int or tuple, optional
    """
    if not 0 < alpha <= 2:
        raise DomainError(f"alpha must lie in (0, 2], got {alpha}")
    if not -1 <= beta <= 1:
        raise DomainError(f"beta must lie in [-1, 1], got {beta}")
    half_pi = 0.5 * math.pi
    v = rng.uniform(-half_pi, half_pi, size)
    w = rng.standard_exponential(size)
    if alpha == 1:
        bv = half_pi + beta * v
        return (bv * np.tan(v) - beta * np.log(half_pi * w * np.cos(v) / bv)) / half_pi
    tan_term = beta * math.tan(half_pi * alpha)
    shift = math.atan(tan_term) / alpha
    scale = (1.0 + tan_term * tan_term) ** (0.5 / alpha)
    cos_v = np.cos(v)
    return (scale * np.sin(alpha * (v + shift)) / cos_v ** (1.0 / alpha)
            * (np.cos(v - alpha * (v + shift)) / w) ** ((1.0 - alpha) / alpha))


# --- multivariate normal ----------------------------------------------------

def jittered_cholesky(cov):
    """Lower Cholesky factor of ``cov`` after the jitter policy.

    A jitter of ``1e-10 * mean(diag)`` is always added; on failure it is
    escalated tenfold up to ``1e-4 * mean(diag)``.

    Returns
    -------
    chol : ndarray
    jitter : float
        The diagonal increment that was finally used.

    Raises
    ------
    NumericalError
        If the matrix is still not positive definite at the largest jitter.
    """
    cov = np.array(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise NumericalError(f"covariance must be square, got shape {cov.shape}", cov)
    if not np.isfinite(cov).all():
        raise NumericalError("covariance has non-finite entries", cov)
    diag = cov.diagonal().copy()
    scale = float(diag.mean())
    if not scale > 0:
        # all-zero (degenerate) diagonal: jitter relative to unit scale
        scale = 1.0
    step = cov.shape[0] + 1
    for rel in _JITTER_LEVELS:
        jitter = rel * scale
        cov.flat[::step] = diag + jitter
        try:
            return np.linalg.cholesky(cov), jitter
        except np.linalg.LinAlgError:
            pass
    cov.flat[::step] = diag
    raise NumericalError(
        f"matrix not positive definite after jitter {_JITTER_STOP:g}*mean(diag):\n{cov}", cov)


class MVN:
    """Multivariate normal with a cached triangular factorization.

    ``logpdf`` includes the full normalizing constant.
    """

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (self.mean.size, self.mean.size):
            raise DomainError(f"cov shape {cov.shape} does not match mean of size {self.mean.size}")
        self.cov = cov
        self.chol, self.jitter = jittered_cholesky(cov)
        self._chol_inv = np.linalg.inv(self.chol)
        self._log_norm = -0.5 * self.mean.size * LOG_2PI - np.sum(np.log(np.diag(self.chol)))

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng, size=None):
        if size is None:
            return self.mean + self.chol @ rng.standard_normal(self.dim)
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T

    def logpdf(self, x):
        """Log-density at ``x`` (a vector, or rows of a 2-d array)."""
        dev = np.asarray(x, dtype=float) - self.mean
        white = dev @ self._chol_inv.T
        return self._log_norm - 0.5 * np.sum(white * white, axis=-1)


def mvn_logpdf(x, mean, cov):
    """One-shot Gaussian log-density; raises :class:`NumericalError` if ``cov`` is unusable."""
    chol, _ = jittered_cholesky(cov)
    dev = np.asarray(x, dtype=float) - np.asarray(mean, dtype=float)
    white = solve_triangular(chol, dev, lower=True, check_finite=False)
    return (-0.5 * dev.size * LOG_2PI - np.sum(np.log(np.diag(chol)))
            - 0.5 * float(white @ white))
