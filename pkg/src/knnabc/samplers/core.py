"""Shared Metropolis-Hastings machinery: acceptance, proposals, adaptation, output."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..history import UNIFORM
from ..rng import CHAIN, HISTORY, MODEL, MVN, DomainError, stream

RW, IS = "rw", "is"


def mh_accept(log_num, log_den, rng):
    """Metropolis-Hastings decision in log space.

    A uniform is always drawn so that the stream position does not depend on
    the outcome.  Zero-density conventions: a zero numerator rejects, a zero
    denominator with a positive numerator accepts, and 0/0 rejects.
    """
    u = rng.random()
    if not log_num > -math.inf:
        return False
    if log_den == -math.inf:
        return True
    diff = log_num - log_den
    return diff >= 0 or u < math.exp(diff)


def default_scale(kind, q, family="abc"):
    """Proposal scale c: 2.38^2/q for random walks, 3 (ABC) or 1.5 (BSL) for independence."""
    if kind == RW:
        return 2.38 ** 2 / q
    if kind == IS:
        return 3.0 if family == "abc" else 1.5
    raise DomainError(f"unknown proposal kind {kind!r}")


class ProposalSpec:
    """Gaussian proposal: random walk around the current state or independent.

    ``sigma`` already includes the scale ``c``.
    """

    def __init__(self, kind, mu, sigma, c=1.0):
        if kind not in (RW, IS):
            raise DomainError(f"unknown proposal kind {kind!r}")
        if not c > 0:
            raise DomainError(f"proposal scale must be positive, got {c}")
        self.kind, self.c = kind, float(c)
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        self._mvn = MVN(self.mu if kind == IS else np.zeros_like(self.mu), self.sigma)

    def draw(self, theta, rng):
        if self.kind == RW:
            return theta + self._mvn.sample(rng)
        return self._mvn.sample(rng)

    def log_density(self, to, frm):
        """log q(to | frm)."""
        if self.kind == RW:
            return float(self._mvn.logpdf(to - frm))
        return float(self._mvn.logpdf(to))

    def log_ratio(self, current, proposed):
        """log q(current | proposed) - log q(proposed | current)."""
        if self.kind == RW:
            return 0.0
        return self.log_density(current, proposed) - self.log_density(proposed, current)

    @classmethod
    def from_prior(cls, prior, kind, c):
        return cls(kind, prior.mean, c * prior.cov, c)


def adapt_proposal(draws, c, kind):
    """Proposal with mean and ``c`` times covariance of ``draws``."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2:
        raise DomainError("adaptation needs at least two draws")
    cov = np.atleast_2d(np.cov(draws, rowvar=False))
    return ProposalSpec(kind, draws.mean(axis=0), c * cov, c)


class AdaptationPlan:
    """Adaptation points b, 2b, ..., Jb with b = floor(B / J)."""

    def __init__(self, B, J):
        B, J = int(B), int(J)
        if J < 1 or B < J:
            raise DomainError(f"need 1 <= J <= B, got B={B}, J={J}")
        self.B, self.J = B, J
        self.b = B // J
        self.points = self.b * np.arange(1, J + 1)
        self._index = {int(a): j for j, a in enumerate(self.points, start=1)}

    def level(self, t):
        """Index j with a_j == t, or 0 if t is not an adaptation point."""
        return self._index.get(int(t), 0)


@dataclass
class SamplerConfig:
    """Run-length, batch-size and proposal settings shared by the samplers."""

    M: int = 50_000
    B: int = 10_000
    m: int = 50
    N0: int = 500
    J: int = 15
    c: float = None
    scheme: str = UNIFORM
    max_init: int = 100_000

    def __post_init__(self):
        if not 0 <= self.B <= self.M:
            raise DomainError(f"need 0 <= B <= M, got B={self.B}, M={self.M}")
        if self.m < 2:
            raise DomainError(f"m must be >= 2, got {self.m}")
        if self.N0 < 1:
            raise DomainError(f"N0 must be >= 1, got {self.N0}")

    def scale(self, kind, q, family="abc"):
        return default_scale(kind, q, family) if self.c is None else float(self.c)


@dataclass
class ChainOutput:
    """Per-iteration record of an MCMC run.

    ``values`` holds the proposal's discrepancy (ABC) or log synthetic
    likelihood (BSL); ``n_sim`` counts datasets simulated inside the loop and
    ``n_sim_setup`` those simulated before it (initial history, start search).
    """

    name: str
    draws: np.ndarray
    accepted: np.ndarray
    proposals: np.ndarray
    values: np.ndarray
    eps: np.ndarray
    wall_ns: np.ndarray
    cpu_seconds: float = 0.0
    n_sim: int = 0
    n_sim_setup: int = 0
    B: int = 0
    adaptations: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    @property
    def M(self):
        return self.draws.shape[0]

    @property
    def post_burn(self):
        return self.draws[self.B:]

    @property
    def acceptance_rate(self):
        return float(self.accepted[self.B:].mean()) if self.M > self.B else float("nan")

    @classmethod
    def allocate(cls, name, M, q, B):
        return cls(name, np.empty((M, q)), np.zeros(M, dtype=bool), np.full((M, q), np.nan),
                   np.full(M, np.nan), np.full(M, np.nan), np.zeros(M, dtype=np.int64), B=B)


def chain_streams(rng):
    """Independent (chain, history, model) generators from a seed or a Generator."""
    if isinstance(rng, np.random.Generator):
        return tuple(rng.spawn(3))
    seed = int(rng)
    return stream(seed, CHAIN), stream(seed, HISTORY), stream(seed, MODEL)


class Simulator:
    """Counts simulated datasets and maps parameters to summaries."""

    def __init__(self, model, y0, rng):
        self.model = model
        self.y0 = np.asarray(y0, dtype=float)
        self.n = self.y0.size
        self.ref = self.y0 if model.needs_ref else None
        self.s0 = model.summarize(self.y0, self.ref)
        self.rng = rng
        self.calls = 0

    def summaries(self, theta, m):
        self.calls += m
        return self.model.summarize_many(self.model.simulate_many(theta, m, self.n, self.rng), self.ref)

    def summary(self, theta):
        return self.summaries(theta, 1)[0]


def find_initial(sim, metric, eps, rng, max_tries):
    """Prior draw whose simulated discrepancy is below ``eps``."""
    prior = sim.model.prior
    for _ in range(int(max_tries)):
        theta = prior.sample(rng)
        delta = float(metric(sim.summary(theta)))
        if delta < eps:
            return theta, delta
    raise RuntimeError(f"no prior draw reached discrepancy < {eps:g} in {max_tries} tries")


def draw_in_support(proposal, theta, prior, rng, max_tries=10_000):
    """Proposal draw conditioned on the prior support, by redrawing."""
    for _ in range(max_tries):
        zeta = proposal.draw(theta, rng)
        if prior.in_support(zeta):
            return zeta
    raise RuntimeError("proposal puts (almost) no mass on the prior support")


class Clock:
    """Wall-clock accumulator for the chain loop."""

    def __init__(self):
        self.start = time.perf_counter_ns()
        self.last = self.start

    def tick(self):
        now = time.perf_counter_ns()
        elapsed, self.last = now - self.last, now
        return elapsed

    def seconds(self):
        return (self.last - self.start) * 1e-9


def systematic_resample(weights, rng):
    """Indices drawn by systematic resampling of unnormalized ``weights``."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    total = w.sum()
    if not total > 0:
        raise DomainError("cannot resample: all weights are zero")
    cum = np.cumsum(w / total)
    cum[-1] = 1.0
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(cum, positions, side="right")
