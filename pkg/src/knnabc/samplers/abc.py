"""ABC samplers: accept/reject, ABC-MCMC, ABC-MCMC-M, AABC-MCMC and ABC-SMC."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..history import History
from .core import (IS, RW, AdaptationPlan, ChainOutput, Clock, ProposalSpec, SamplerConfig,
                   Simulator, adapt_proposal, chain_streams, draw_in_support, find_initial,
                   mh_accept, systematic_resample)


@dataclass
class RejectionOutput:
    draws: np.ndarray
    discrepancies: np.ndarray
    tries: int
    n_sim: int
    cpu_seconds: float
    exhausted: bool


def run_accept_reject(model, y0, metric, eps, M, rng, max_tries=None):
    """Prior draws kept when their simulated discrepancy is below ``eps``.

    Stops after ``max_tries`` prior draws (default ``10**4 * M``) and then
    returns what it has with ``exhausted=True``.
    """
    chain_rng, _, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    max_tries = 10_000 * M if max_tries is None else int(max_tries)
    draws, deltas = [], []
    clock = Clock()
    tries = 0
    while len(draws) < M and tries < max_tries:
        tries += 1
        theta = model.prior.sample(chain_rng)
        delta = float(metric(sim.summary(theta)))
        if delta < eps:
            draws.append(theta)
            deltas.append(delta)
    clock.tick()
    q = model.prior.mean.size
    return RejectionOutput(np.array(draws).reshape(-1, q), np.array(deltas), tries, sim.calls,
                           clock.seconds(), len(draws) < M)


def _abc_chain(name, sim, metric, schedule, plan, proposal, c, M, B, rng, theta0,
               pilot_level=None):
    prior = sim.model.prior
    q = theta0.size
    out = ChainOutput.allocate(name, M, q, B)
    out.flags["empty_windows"] = 0
    eps = float(schedule[0])
    theta, lp = theta0, prior.logpdf(theta0)
    window = 0
    clock = Clock()
    for t in range(1, M + 1):
        j = plan.level(t) if plan is not None else 0
        if j:
            if pilot_level is None:
                eps = float(schedule[j])
            elif j >= 2:
                # the first point keeps eps0; later ones use the window since a_{j-1}
                sl = slice(window, t - 1)
                accepted = out.values[sl][out.accepted[sl]]
                if accepted.size:
                    eps = float(np.quantile(accepted, pilot_level))
                else:
                    out.flags["empty_windows"] += 1
            window = t - 1
            if t - 1 >= 2:
                proposal = adapt_proposal(out.draws[:t - 1], c, proposal.kind)
                out.adaptations.append(t)
        zeta = proposal.draw(theta, rng)
        out.proposals[t - 1] = zeta
        log_num = log_den = -math.inf
        lp_zeta = prior.logpdf(zeta)
        if lp_zeta > -math.inf:
            delta = float(metric(sim.summary(zeta)))
            out.values[t - 1] = delta
            if delta < eps:
                log_q = proposal.log_ratio(theta, zeta)
                log_num, log_den = lp_zeta + log_q, lp
        if mh_accept(log_num, log_den, rng):
            theta, lp = zeta, lp_zeta
            out.accepted[t - 1] = True
        out.draws[t - 1] = theta
        out.eps[t - 1] = eps
        out.wall_ns[t - 1] = clock.tick()
    out.cpu_seconds = clock.seconds()
    return out


def run_abc_mcmc(model, y0, metric, eps, proposal, M, rng, theta0=None, max_init=100_000):
    """ABC-MCMC with a fixed tolerance and fixed proposal."""
    chain_rng, _, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    if theta0 is None:
        theta0, _ = find_initial(sim, metric, eps, chain_rng, max_init)
    setup = sim.calls
    out = _abc_chain("abc-mcmc", sim, metric, [eps], None, proposal, proposal.c, M, 0, chain_rng,
                     np.asarray(theta0, dtype=float))
    out.n_sim, out.n_sim_setup = sim.calls - setup, setup
    return out


def run_abc_mcmc_m(model, y0, metric, schedule, plan, kind, config, rng, pilot_level=None):
    """ABC-MCMC with a decreasing tolerance schedule and burn-in adaptation.

    The chain starts from a prior draw below ``schedule[0]`` with a proposal
    built from the prior moments.  At each adaptation point ``a_j`` the
    tolerance moves to ``schedule[j]`` and the proposal is refit to all draws
    so far; both are frozen after ``a_J``.

    With ``pilot_level`` set, the schedule beyond its first entry is ignored
    and each new tolerance is instead that quantile of the discrepancies
    accepted since the previous adaptation point (the previous tolerance is
    kept when none were accepted).
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size != plan.J + 1:
        raise ValueError(f"schedule has {schedule.size} entries, plan needs {plan.J + 1}")
    chain_rng, _, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    theta0, _ = find_initial(sim, metric, schedule[0], chain_rng, config.max_init)
    setup = sim.calls
    c = config.scale(kind, theta0.size, "abc")
    proposal = ProposalSpec.from_prior(model.prior, kind, c)
    name = "abc-pilot" if pilot_level is not None else f"abc-{kind}"
    out = _abc_chain(name, sim, metric, schedule, plan, proposal, c, config.M, config.B,
                     chain_rng, theta0, pilot_level)
    out.n_sim, out.n_sim_setup = sim.calls - setup, setup
    return out


def initial_abc_history(sim, metric, N0, rng):
    """``N0`` prior draws paired with the discrepancy of one simulated dataset each."""
    prior = sim.model.prior
    zetas = np.array([prior.sample(rng) for _ in range(N0)])
    deltas = np.array([float(metric(sim.summary(z))) for z in zetas])
    hist = History(zetas.shape[1], (), capacity=N0 + 1024)
    hist.extend(zetas, deltas)
    return hist


def run_aabc(model, y0, metric, schedule, plan, config, rng, history=None, frozen=False):
    """Approximated ABC-MCMC: independence sampler with kNN-estimated acceptance.

    Each iteration draws the proposal and a second, independent point from
    the same Gaussian; only the second point is simulated, and its
    (parameter, discrepancy) pair joins the history.  The acceptance
    probabilities at the proposal and at the current state are kNN
    estimates from the whole history.  The simulated point is redrawn until
    it falls in the prior support so that it can be simulated.

    With ``frozen=True`` no dual point is drawn or simulated and the given
    history never changes, so the chain targets the fixed perturbed
    posterior p(theta) h_hat(theta); this is a diagnostic mode.
    """
    schedule = np.asarray(schedule, dtype=float)
    if schedule.size != plan.J + 1:
        raise ValueError(f"schedule has {schedule.size} entries, plan needs {plan.J + 1}")
    chain_rng, hist_rng, model_rng = chain_streams(rng)
    sim = Simulator(model, y0, model_rng)
    prior = model.prior
    if history is None:
        history = initial_abc_history(sim, metric, config.N0, hist_rng)
    theta, _ = find_initial(sim, metric, schedule[0], chain_rng, config.max_init)
    setup = sim.calls
    q = theta.size
    c = config.scale(IS, q, "abc")
    proposal = ProposalSpec.from_prior(prior, IS, c)
    scheme = config.scheme
    M = config.M
    out = ChainOutput.allocate(f"aabc-{scheme[0]}", M, q, config.B)
    out.flags["start_history"] = len(history)
    eps = float(schedule[0])
    lp = prior.logpdf(theta)
    clock = Clock()
    for t in range(1, M + 1):
        j = plan.level(t)
        if j:
            eps = float(schedule[j])
            if t - 1 >= 2:
                proposal = adapt_proposal(out.draws[:t - 1], c, IS)
                out.adaptations.append(t)
        zeta = proposal.draw(theta, chain_rng)
        if not frozen:
            dual = draw_in_support(proposal, theta, prior, hist_rng)
            history.append(dual, float(metric(sim.summary(dual))))
        out.proposals[t - 1] = zeta
        log_num = log_den = -math.inf
        lp_zeta = prior.logpdf(zeta)
        if lp_zeta > -math.inf:
            h_zeta = history.h_hat(zeta, eps, scheme)
            out.values[t - 1] = h_zeta
            if h_zeta > 0:
                h_theta = history.h_hat(theta, eps, scheme)
                log_num = lp_zeta + math.log(h_zeta) + proposal.log_density(theta, zeta)
                log_den = (lp + (math.log(h_theta) if h_theta > 0 else -math.inf)
                           + proposal.log_density(zeta, theta))
        if mh_accept(log_num, log_den, chain_rng):
            theta, lp = zeta, lp_zeta
            out.accepted[t - 1] = True
        out.draws[t - 1] = theta
        out.eps[t - 1] = eps
        out.wall_ns[t - 1] = clock.tick()
    out.cpu_seconds = clock.seconds()
    out.n_sim, out.n_sim_setup = sim.calls - setup, setup
    out.history = history
    return out


@dataclass
class SmcOutput:
    particles: np.ndarray
    discrepancies: np.ndarray
    eps: np.ndarray
    n_sim: int
    cpu_seconds: float
    alive: list = field(default_factory=list)
    move_rate: list = field(default_factory=list)


class ParticleDegeneracy(RuntimeError):
    """No particle satisfies the next tolerance."""


def run_abc_smc(model, y0, metric, schedule, rng, n_particles=500, max_moves=1, max_tries=None):
    """ABC-SMC through a decreasing tolerance schedule.

    Particles start as accept/reject draws at ``schedule[0]``.  For each
    following tolerance, particles are weighted by whether their discrepancy
    still qualifies, resampled systematically, and each is moved by up to
    ``max_moves`` random-walk ABC-MCMC steps targeting the new tolerance
    (stopping at the first accepted move).  The random-walk covariance is
    ``2.38^2/q`` times the particle covariance.
    """
    schedule = np.asarray(schedule, dtype=float)
    chain_rng, _, model_rng = chain_streams(rng)
    init = run_accept_reject(model, y0, metric, schedule[0], n_particles, chain_rng, max_tries)
    if init.exhausted:
        raise ParticleDegeneracy(f"accept/reject filled {len(init.draws)} of {n_particles} particles")
    sim = Simulator(model, y0, model_rng)
    prior = model.prior
    particles, deltas = init.draws.copy(), init.discrepancies.copy()
    q = particles.shape[1]
    c = 2.38 ** 2 / q
    result = SmcOutput(particles, deltas, schedule, init.n_sim, 0.0)
    clock = Clock()
    for eps in schedule[1:]:
        alive = deltas < eps
        result.alive.append(float(alive.mean()))
        if not alive.any():
            raise ParticleDegeneracy(
                f"no particle below eps={eps:g}; smallest discrepancy {deltas.min():g}")
        idx = systematic_resample(alive.astype(float), chain_rng)
        particles, deltas = particles[idx], deltas[idx]
        proposal = adapt_proposal(particles, c, RW) if np.unique(particles, axis=0).shape[0] > 1 \
            else ProposalSpec.from_prior(prior, RW, c * 1e-2)
        moved = 0
        for i in range(n_particles):
            for _ in range(max_moves):
                zeta = proposal.draw(particles[i], chain_rng)
                lp_zeta = prior.logpdf(zeta)
                log_num = -math.inf
                if lp_zeta > -math.inf:
                    delta = float(metric(sim.summary(zeta)))
                    if delta < eps:
                        log_num = lp_zeta
                if mh_accept(log_num, prior.logpdf(particles[i]), chain_rng):
                    particles[i], deltas[i] = zeta, delta
                    moved += 1
                    break
        result.move_rate.append(moved / n_particles)
    clock.tick()
    result.particles, result.discrepancies = particles, deltas
    result.n_sim += sim.calls
    result.cpu_seconds = init.cpu_seconds + clock.seconds()
    return result
