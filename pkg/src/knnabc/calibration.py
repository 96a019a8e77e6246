"""Discrepancy metric, its calibration, and tolerance schedules."""

import json

import numpy as np

from .rng import DomainError, NumericalError, as_generator, jittered_cholesky


class Metric:
    """Quadratic-form discrepancy ``(s - s0)^T A (s - s0)``."""

    def __init__(self, A, s0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        s0 = np.atleast_1d(np.asarray(s0, dtype=float))
        if A.shape != (s0.size, s0.size):
            raise DomainError(f"A has shape {A.shape}, expected {(s0.size, s0.size)}")
        self.A = 0.5 * (A + A.T)
        self.s0 = s0

    @property
    def p(self):
        return self.s0.size

    def __call__(self, s):
        """Discrepancy of one summary vector, or of each row of a matrix."""
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.p:
            raise DomainError(f"summary has {s.shape[-1]} components, metric expects {self.p}")
        dev = s - self.s0
        return np.einsum("...i,ij,...j->...", dev, self.A, dev)

    def to_dict(self):
        return {"p": self.p, "A": self.A.tolist(), "s0": self.s0.tolist()}

    @classmethod
    def from_dict(cls, data):
        metric = cls(np.array(data["A"], dtype=float), np.array(data["s0"], dtype=float))
        if metric.p != data["p"]:
            raise DomainError("metric file is inconsistent: p does not match s0")
        return metric

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def discrepancy(metric, s):
    return metric(s)


def inverse_covariance(summaries):
    """Symmetric inverse of the sample covariance, using the jitter policy."""
    cov = np.atleast_2d(np.cov(np.asarray(summaries, dtype=float), rowvar=False))
    chol, _ = jittered_cholesky(cov)
    inv_chol = np.linalg.inv(chol)
    A = inv_chol.T @ inv_chol
    return 0.5 * (A + A.T)


def estimate_A(model, y0, rng, rounds=3, n_outer=500, n_inner=100, n=None):
    """Iteratively learn the discrepancy matrix.

    Starting from the identity, each round draws ``n_outer`` prior points,
    simulates one dataset at each, takes the point with the smallest
    discrepancy under the current matrix, simulates ``n_inner`` datasets there
    and replaces the matrix by the inverse covariance of their summaries.

    Returns
    -------
    metric : Metric
    outer_summaries : ndarray, shape (rounds * n_outer, p)
        Every prior-predictive summary drawn along the way, for tolerance
        calibration.
    """
    rng = as_generator(rng)
    y0 = np.asarray(y0, dtype=float)
    n = y0.size if n is None else n
    ref = y0 if model.needs_ref else None
    s0 = model.summarize(y0, ref)
    metric = Metric(np.eye(s0.size), s0)
    pooled = []
    for _ in range(rounds):
        thetas = np.array([model.prior.sample(rng) for _ in range(n_outer)])
        summaries = np.vstack([model.summarize(model.simulate(t, n, rng), ref) for t in thetas])
        pooled.append(summaries)
        best = thetas[int(np.argmin(metric(summaries)))]
        inner = model.summarize_many(model.simulate_many(best, n_inner, n, rng), ref)
        try:
            metric = Metric(inverse_covariance(inner), s0)
        except NumericalError as exc:
            raise NumericalError(f"summary covariance at {best} is singular", exc.matrix) from exc
    return metric, np.vstack(pooled)


def log_space_schedule(eps0, epsJ, J):
    """``J + 1`` tolerances from ``eps0`` down to ``epsJ`` in equal log steps."""
    if not eps0 > epsJ > 0:
        raise DomainError(f"need eps0 > epsJ > 0, got {eps0}, {epsJ}")
    if J < 1:
        raise DomainError(f"J must be >= 1, got {J}")
    eps = np.exp(np.log(eps0) + np.arange(J + 1) * (np.log(epsJ) - np.log(eps0)) / J)
    eps[0], eps[-1] = eps0, epsJ
    return eps


def check_schedule(eps):
    eps = np.asarray(eps, dtype=float)
    if eps.ndim != 1 or eps.size < 2 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise DomainError("tolerance schedule must be positive and strictly decreasing")
    return eps


def initial_tolerance(metric, summaries, level=0.05):
    return float(np.quantile(metric(summaries), level))


def pilot_epsilon_run(model, y0, metric, rng, B, J, calibration_summaries, level=0.01,
                      initial_level=0.05, max_init=100_000):
    """Find (eps0, epsJ) from calibration draws and a random-walk pilot chain.

    ``eps0`` is the ``initial_level`` quantile of the calibration
    discrepancies.  The pilot is a random-walk ABC-MCMC-M run of length ``B``
    whose tolerance at each adaptation point becomes the ``level`` quantile
    of the discrepancies accepted since the previous point.

    Returns
    -------
    eps0, epsJ : float
    pilot : ChainOutput
        The pilot chain; ``flags['empty_windows']`` counts adaptation points
        that kept the previous tolerance.
    """
    from .samplers.abc import run_abc_mcmc_m
    from .samplers.core import AdaptationPlan, SamplerConfig

    eps0 = initial_tolerance(metric, calibration_summaries, initial_level)
    plan = AdaptationPlan(B, J)
    config = SamplerConfig(M=B, B=B, J=J, max_init=max_init)
    pilot = run_abc_mcmc_m(model, y0, metric, np.full(J + 1, eps0), plan, "rw", config, rng,
                           pilot_level=level)
    epsJ = float(pilot.eps[-1]) if pilot.eps.size else eps0
    return eps0, min(epsJ, eps0), pilot


class CalibrationError(RuntimeError):
    """The pilot chain could not produce a usable tolerance schedule."""


def calibrate(model, y0, rng, B=10_000, J=15, rounds=3, n_outer=500, n_inner=100):
    """Metric and tolerance schedule for one (model, dataset) pair."""
    rng = as_generator(rng)
    metric, pooled = estimate_A(model, y0, rng, rounds, n_outer, n_inner)
    eps0, epsJ, pilot = pilot_epsilon_run(model, y0, metric, rng, B, J, pooled)
    if not epsJ < eps0:
        raise CalibrationError(
            f"pilot chain accepted nothing below eps0={eps0:g} in {B} iterations")
    return metric, log_space_schedule(eps0, epsJ, J), pilot
