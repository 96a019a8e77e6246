"""Likelihood-based baselines: exact MA2 Metropolis and particle MCMC."""

import math

import numpy as np

from ..models import MA2, ma2_exact_loglik
from ..rng import NumericalError
from .core import (RW, AdaptationPlan, ChainOutput, Clock, ProposalSpec, adapt_proposal,
                   chain_streams, mh_accept, systematic_resample)


def _rw_chain(name, prior, loglik, config, chain_rng, theta):
    """Adaptive random-walk Metropolis on ``prior.logpdf + loglik``.

    ``loglik`` is only called at proposals inside the support; the current
    state's value is carried along.
    """
    M = config.M
    plan = AdaptationPlan(config.B, config.J)
    q = theta.size
    c = config.scale(RW, q)
    proposal = ProposalSpec.from_prior(prior, RW, c)
    lp = prior.logpdf(theta) + loglik(theta)
    out = ChainOutput.allocate(name, M, q, config.B)
    clock = Clock()
    for t in range(1, M + 1):
        if plan.level(t) and t - 1 >= 2:
            proposal = adapt_proposal(out.draws[:t - 1], c, RW)
            out.adaptations.append(t)
        zeta = proposal.draw(theta, chain_rng)
        out.proposals[t - 1] = zeta
        lp_zeta = prior.logpdf(zeta)
        if lp_zeta > -math.inf:
            lp_zeta += loglik(zeta)
            out.values[t - 1] = lp_zeta
        if mh_accept(lp_zeta, lp, chain_rng):
            theta, lp = zeta, lp_zeta
            out.accepted[t - 1] = True
        out.draws[t - 1] = theta
        out.wall_ns[t - 1] = clock.tick()
    out.cpu_seconds = clock.seconds()
    return out


def run_exact_ma2(y0, config, rng, theta0=None):
    """Random-walk Metropolis on the exact MA2 posterior."""
    prior = MA2().prior
    chain_rng, _, _ = chain_streams(rng)
    y0 = np.asarray(y0, dtype=float)

    def loglik(theta):
        try:
            return ma2_exact_loglik(theta, y0)
        except NumericalError:
            return -math.inf

    if theta0 is None:
        theta0 = prior.mean.copy()
    return _rw_chain("exact", prior, loglik, config, chain_rng, np.asarray(theta0, dtype=float))


def bootstrap_pf_loglik(hmm, y, theta, P, rng):
    """Bootstrap particle filter estimate of log p(y | theta).

    Particles are propagated with the transition sampler, weighted by the
    emission density and resampled systematically at every step.  Returns
    ``-inf`` as soon as every weight vanishes.
    """
    y = np.asarray(y, dtype=float)
    x = hmm.initial_sample(theta, P, rng)
    total = 0.0
    for t, yt in enumerate(y):
        if t:
            x = hmm.transition_sample(x, theta, rng)
        logw = np.asarray(hmm.emission_logpdf(yt, x, theta), dtype=float)
        top = logw.max()
        if not np.isfinite(top):
            return -math.inf
        w = np.exp(logw - top)
        total += top + math.log(w.mean())
        x = x[systematic_resample(w, rng)]
    return total


def run_pmcmc(model, y0, config, rng, P=100, theta0=None):
    """Pseudo-marginal random-walk Metropolis with a bootstrap filter.

    The filter runs once per in-support proposal; the current state's
    estimate is reused until a proposal is accepted.
    """
    if model.hmm is None:
        raise ValueError(f"model {model.name!r} has no state-space densities")
    chain_rng, _, model_rng = chain_streams(rng)
    y0 = np.asarray(y0, dtype=float)
    calls = [0]

    def loglik(theta):
        calls[0] += 1
        return bootstrap_pf_loglik(model.hmm, y0, theta, P, model_rng)

    if theta0 is None:
        theta0 = model.prior.mean.copy()
        if not model.prior.in_support(theta0):
            theta0 = model.prior.sample(chain_rng)
    out = _rw_chain(f"pmcmc-{P}", model.prior, loglik, config, chain_rng,
                    np.asarray(theta0, dtype=float))
    out.flags["filter_calls"] = calls[0]
    return out
