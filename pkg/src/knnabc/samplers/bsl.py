"""Synthetic-likelihood samplers: BSL-MCMC and its kNN-recycling variant ABSL."""

import math

import numpy as np

from ..history import History
from ..rng import NumericalError, mvn_logpdf
from .core import (IS, AdaptationPlan, ChainOutput, Clock, ProposalSpec, Simulator,
                   adapt_proposal, chain_streams, draw_in_support, mh_accept)


def synthetic_loglik(s0, summaries):
    """Gaussian log-density of ``s0`` under the sample moments of ``summaries``
    (covariance divisor m - 1)."""
    mu = summaries.mean(axis=0)
    sigma = np.atleast_2d(np.cov(summaries, rowvar=False))
    return mvn_logpdf(s0, mu, sigma)


def _safe(loglik, *args):
    # a covariance that survives no jitter level makes the point unusable
    try:
        return loglik(*args), False
    except NumericalError:
        return -math.inf, True


def _start(prior, rng):
    theta = prior.mean.copy()
    return theta if prior.in_support(theta) else prior.sample(rng)


def run_bsl(model, y0, kind, config, rng):
    """BSL-MCMC with fresh ``m``-sample moment estimates at every proposal.

    The proposal (random walk or independent Gaussian) starts from the prior
    moments and is refit to the chain at each burn-in adaptation point.
    """
    chain_rng, _, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    prior = model.prior
    m, M = config.m, config.M
    plan = AdaptationPlan(config.B, config.J)
    theta = _start(prior, chain_rng)
    q = theta.size
    c = config.scale(kind, q, "bsl")
    proposal = ProposalSpec.from_prior(prior, kind, c)
    log_h, _ = _safe(synthetic_loglik, sim.s0, sim.summaries(theta, m))
    setup = sim.calls
    lp = prior.logpdf(theta)
    out = ChainOutput.allocate(f"bsl-{kind}", M, q, config.B)
    out.flags["singular"] = 0
    clock = Clock()
    for t in range(1, M + 1):
        if plan.level(t) and t - 1 >= 2:
            proposal = adapt_proposal(out.draws[:t - 1], c, kind)
            out.adaptations.append(t)
        zeta = proposal.draw(theta, chain_rng)
        out.proposals[t - 1] = zeta
        log_num = -math.inf
        lp_zeta = prior.logpdf(zeta)
        if lp_zeta > -math.inf:
            log_h_zeta, bad = _safe(synthetic_loglik, sim.s0, sim.summaries(zeta, m))
            out.flags["singular"] += bad
            out.values[t - 1] = log_h_zeta
            log_num = lp_zeta + log_h_zeta + proposal.log_ratio(theta, zeta)
        if mh_accept(log_num, lp + log_h, chain_rng):
            theta, lp, log_h = zeta, lp_zeta, log_h_zeta
            out.accepted[t - 1] = True
        out.draws[t - 1] = theta
        out.wall_ns[t - 1] = clock.tick()
    out.cpu_seconds = clock.seconds()
    out.n_sim, out.n_sim_setup = sim.calls - setup, setup
    return out


def initial_bsl_history(sim, N0, m, rng):
    """``N0`` prior draws, each with ``m`` simulated summary vectors."""
    prior = sim.model.prior
    zetas = np.array([prior.sample(rng) for _ in range(N0)])
    blocks = np.stack([sim.summaries(z, m) for z in zetas])
    hist = History(zetas.shape[1], blocks.shape[1:], capacity=N0 + 1024, center=sim.s0)
    hist.extend(zetas, blocks)
    return hist


def run_absl(model, y0, config, rng, history=None):
    """Approximated BSL: independence sampler with kNN-weighted moments.

    Each iteration draws the proposal and an independent second point from
    the same Gaussian; ``m`` datasets are simulated only at the second point
    and stored.  Synthetic likelihoods at the proposal and the current state
    use weighted moments of their nearest stored blocks.
    """
    chain_rng, hist_rng, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    prior = model.prior
    m, M, scheme = config.m, config.M, config.scheme
    if history is None:
        history = initial_bsl_history(sim, config.N0, m, hist_rng)
    setup = sim.calls
    plan = AdaptationPlan(config.B, config.J)
    theta = _start(prior, chain_rng)
    q = theta.size
    c = config.scale(IS, q, "bsl")
    proposal = ProposalSpec.from_prior(prior, IS, c)
    lp = prior.logpdf(theta)
    s0 = sim.s0

    def loglik(point):
        mu, sigma = history.moments_hat(point, scheme)
        return mvn_logpdf(s0, mu, sigma)

    out = ChainOutput.allocate(f"absl-{scheme[0]}", M, q, config.B)
    out.flags["singular"] = 0
    out.flags["start_history"] = len(history)
    clock = Clock()
    for t in range(1, M + 1):
        if plan.level(t) and t - 1 >= 2:
            proposal = adapt_proposal(out.draws[:t - 1], c, IS)
            out.adaptations.append(t)
        zeta = proposal.draw(theta, chain_rng)
        dual = draw_in_support(proposal, theta, prior, hist_rng)
        history.append(dual, sim.summaries(dual, m))
        out.proposals[t - 1] = zeta
        log_num = log_den = -math.inf
        lp_zeta = prior.logpdf(zeta)
        if lp_zeta > -math.inf:
            log_h_zeta, bad = _safe(loglik, zeta)
            out.flags["singular"] += bad
            out.values[t - 1] = log_h_zeta
            if log_h_zeta > -math.inf:
                log_h_theta, bad = _safe(loglik, theta)
                out.flags["singular"] += bad
                log_num = lp_zeta + log_h_zeta + proposal.log_density(theta, zeta)
                log_den = lp + log_h_theta + proposal.log_density(zeta, theta)
        if mh_accept(log_num, log_den, chain_rng):
            theta, lp = zeta, lp_zeta
            out.accepted[t - 1] = True
        out.draws[t - 1] = theta
        out.wall_ns[t - 1] = clock.tick()
    out.cpu_seconds = clock.seconds()
    out.n_sim, out.n_sim_setup = sim.calls - setup, setup
    out.history = history
    return out
