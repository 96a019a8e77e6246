"""Chain efficiency and accuracy metrics.

ACT/ESS follow the initial-positive-sequence truncation: autocorrelations are
summed up to, but excluding, the first negative lag.  Densities for the TV
distance are Gaussian KDEs with Silverman's bandwidth on a shared grid.
"""

import math
from collections import namedtuple

import numpy as np
from scipy.integrate import trapezoid

from .rng import DomainError

GRID_SIZE = 512
COLUMNS = ("sampler", "DIM", "DIC", "TV", "sqrt_bias2", "sqrt_var", "sqrt_mse", "ESS",
           "ESS_per_CPU")


def acf(x):
    """Sample autocorrelations at all lags (biased denominator), via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    dev = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(dev, size)
    acov = np.fft.irfft(spec * np.conj(spec), size)[:n]
    return acov / acov[0]


def act(x):
    """Autocorrelation time 1 + 2 * sum of rho_a before the first negative lag.

    A constant chain has infinite ACT.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 10:
        raise DomainError(f"need at least 10 draws, got {x.size}")
    if np.ptp(x) == 0:
        return math.inf
    rho = acf(x)[1:]
    negative = np.flatnonzero(rho < 0)
    stop = negative[0] if negative.size else rho.size
    return 1.0 + 2.0 * float(rho[:stop].sum())


def act_ess(x, cpu_seconds):
    """(ACT, ESS, ESS per CPU second) of one post-burn-in chain component."""
    tau = act(x)
    ess = np.asarray(x).size / tau if math.isfinite(tau) else 0.0
    per_cpu = ess / cpu_seconds if cpu_seconds > 0 else math.nan
    return tau, ess, per_cpu


KdeCurve = namedtuple("KdeCurve", ["grid", "density", "bandwidth", "degenerate"])


def silverman_bandwidth(x):
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to whichever spread is
    nonzero.  Returns 0 for a constant sample."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    q75, q25 = np.quantile(x, (0.75, 0.25))
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0:
        spread = sd
    return 0.9 * spread * x.size ** -0.2


def _kde_on(x, grid, h):
    out = np.zeros(grid.size)
    norm = 1.0 / (x.size * h * math.sqrt(2.0 * math.pi))
    for start in range(0, x.size, 2048):
        z = (grid[:, None] - x[None, start:start + 2048]) / h
        out += np.exp(-0.5 * z * z).sum(axis=1)
    return out * norm


def kde(x, grid_size=GRID_SIZE, grid=None):
    """Gaussian kernel density estimate.

    The default grid spans the sample range padded by three bandwidths.
    A constant sample yields a unit-mass spike on the grid point nearest to
    it, with ``degenerate=True``.
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 30:
        raise DomainError(f"need at least 30 samples, got {x.size}")
    h = silverman_bandwidth(x)
    if grid is None:
        pad = 3 * h if h > 0 else 1.0
        grid = np.linspace(x.min() - pad, x.max() + pad, grid_size)
    grid = np.asarray(grid, dtype=float)
    if h == 0:
        density = np.zeros(grid.size)
        k = int(np.argmin(np.abs(grid - x[0])))
        density[k] = 1.0 / (grid[1] - grid[0])
        return KdeCurve(grid, density, 0.0, True)
    return KdeCurve(grid, _kde_on(x, grid, h), h, False)


def tv_distance(a, b):
    """0.5 * trapezoid integral of |a - b| for two curves on one grid."""
    if a.grid.shape != b.grid.shape or not np.array_equal(a.grid, b.grid):
        raise DomainError("curves must share a grid")
    return 0.5 * float(trapezoid(np.abs(a.density - b.density), a.grid))


def common_grid(x, y, grid_size=GRID_SIZE):
    """Grid over the union range of two samples, padded by three bandwidths."""
    x, y = np.ravel(x), np.ravel(y)
    pad = 3 * max(silverman_bandwidth(x), silverman_bandwidth(y))
    if pad == 0:
        pad = 1.0
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    return np.linspace(lo - pad, hi + pad, grid_size)


def tv_samples(x, y, grid_size=GRID_SIZE):
    """TV distance between KDEs of two samples on their common grid."""
    grid = common_grid(x, y, grid_size)
    return tv_distance(kde(x, grid=grid), kde(y, grid=grid))


def compare_stats(approx, exact, truth, cpu_seconds=None):
    """Accuracy and efficiency summary of one sampler over replicates.

    Parameters
    ----------
    approx, exact : sequences of arrays, shape (T, q)
        Post-burn-in draws per replicate; ``exact`` may be None, in which
        case DIM, DIC and TV are NaN.
    truth : array, shape (q,)
    cpu_seconds : sequence of float, optional
        Chain run time per replicate, for ESS per CPU second.

    Returns
    -------
    dict keyed by ``COLUMNS[1:]``.
    """
    approx = [np.atleast_2d(np.asarray(a, dtype=float)) for a in approx]
    R = len(approx)
    if R < 2:
        raise DomainError("need at least two replicates to estimate VAR")
    truth = np.asarray(truth, dtype=float)
    q = truth.size
    means = np.array([a.mean(axis=0) for a in approx])
    row = dict.fromkeys(COLUMNS[1:], math.nan)
    if exact is not None:
        exact = [np.atleast_2d(np.asarray(e, dtype=float)) for e in exact]
        if len(exact) != R:
            raise DomainError("approx and exact replicate counts differ")
        ex_means = np.array([e.mean(axis=0) for e in exact])
        var = np.array([a.var(axis=0, ddof=1) for a in approx])
        ex_var = np.array([e.var(axis=0, ddof=1) for e in exact])
        row["DIM"] = float(np.mean(np.abs(means - ex_means)))
        row["DIC"] = float(np.mean(np.abs(var - ex_var)))
        row["TV"] = float(np.mean([tv_samples(a[:, s], e[:, s])
                                   for a, e in zip(approx, exact) for s in range(q)]))
    pooled = np.concatenate(approx).mean(axis=0)
    bias2 = float(np.mean((pooled - truth) ** 2))
    var_r = float(np.mean(means.var(axis=0, ddof=1)))
    row["sqrt_bias2"] = math.sqrt(bias2)
    row["sqrt_var"] = math.sqrt(var_r)
    row["sqrt_mse"] = math.sqrt(bias2 + var_r)
    ess = np.array([[act_ess(a[:, s], 1.0)[1] for s in range(q)] for a in approx])
    row["ESS"] = float(ess.mean())
    if cpu_seconds is not None:
        cpu = np.asarray(cpu_seconds, dtype=float)
        row["ESS_per_CPU"] = float(np.mean(ess / cpu[:, None]))
    return row
