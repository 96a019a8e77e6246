import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import LinearGaussianHMM, kalman_loglik, mc_se, toy_posterior_mean
from knnabc.calibration import Metric
from knnabc.history import History
from knnabc.models import MA2, GaussianToy, Ricker, SVGaussian
from knnabc.rng import CHAIN, DATA, DomainError, mvn_logpdf, stream
from knnabc.samplers import (IS, RW, AdaptationPlan, ParticleDegeneracy, ProposalSpec,
                             SamplerConfig, adapt_proposal, bootstrap_pf_loglik, mh_accept,
                             run_aabc, run_abc_mcmc, run_abc_mcmc_m, run_abc_smc,
                             run_accept_reject, run_absl, run_bsl, run_exact_ma2, run_pmcmc,
                             synthetic_loglik)
from knnabc.samplers.bsl import initial_bsl_history
from knnabc.samplers.core import Simulator, default_scale, systematic_resample

EPS = 0.25


def assert_chain_contract(out, prior):
    assert all(prior.in_support(t) for t in out.draws[::50])
    rejected = np.flatnonzero(~out.accepted[1:]) + 1
    assert np.array_equal(out.draws[rejected], out.draws[rejected - 1])
    assert all(a <= out.B for a in out.adaptations)


# --- core ---------------------------------------------------------------------

def test_mh_accept_equal_always():
    rng = stream(1)
    assert all(mh_accept(-3.0, -3.0, rng) for _ in range(1000))


def test_mh_accept_half():
    rng = stream(2)
    rate = np.mean([mh_accept(math.log(0.5), 0.0, rng) for _ in range(10 ** 5)])
    assert abs(rate - 0.5) < 0.01


def test_mh_accept_zero_conventions():
    rng = stream(3)
    assert not any(mh_accept(-math.inf, 0.0, rng) for _ in range(100))
    assert all(mh_accept(0.0, -math.inf, rng) for _ in range(100))
    assert not mh_accept(-math.inf, -math.inf, rng)
    assert not mh_accept(math.nan, 0.0, rng)


def test_default_scales():
    assert default_scale(RW, 2) == pytest.approx(2.38 ** 2 / 2)
    assert default_scale(IS, 3, "abc") == 3.0
    assert default_scale(IS, 3, "bsl") == 1.5
    with pytest.raises(DomainError):
        default_scale("gibbs", 2)


def test_adapt_two_points():
    prop = adapt_proposal(np.array([[0.0, 0.0], [2.0, 2.0]]), 1.0, IS)
    assert np.allclose(prop.mu, [1.0, 1.0])
    assert np.allclose(prop.sigma, [[2.0, 2.0], [2.0, 2.0]])
    # singular covariance still yields a usable Gaussian through jitter
    assert np.isfinite(prop.draw(np.zeros(2), stream(4))).all()


def test_adapt_constant_draws():
    prop = adapt_proposal(np.ones((10, 2)), 2.0, RW)
    assert np.allclose(prop.sigma, 0.0)
    assert np.isfinite(prop.draw(np.ones(2), stream(5))).all()
    with pytest.raises(DomainError):
        adapt_proposal(np.ones((1, 2)), 1.0, RW)


def test_proposal_from_prior_and_ratios():
    prior = MA2().prior
    prop = ProposalSpec.from_prior(prior, IS, 3.0)
    assert np.allclose(prop.mu, prior.mean) and np.allclose(prop.sigma, 3.0 * prior.cov)
    a, b = np.array([0.1, 0.2]), np.array([0.5, -0.1])
    assert prop.log_ratio(a, b) == pytest.approx(prop.log_density(a, b) - prop.log_density(b, a))
    rw = ProposalSpec.from_prior(prior, RW, 1.0)
    assert rw.log_ratio(a, b) == 0.0
    with pytest.raises(DomainError):
        ProposalSpec(IS, [0.0], [[1.0]], c=0.0)


def test_adaptation_plan():
    plan = AdaptationPlan(100, 15)
    assert plan.b == 6 and list(plan.points) == [6 * j for j in range(1, 16)]
    assert plan.level(6) == 1 and plan.level(90) == 15 and plan.level(7) == 0
    with pytest.raises(DomainError):
        AdaptationPlan(3, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5000), st.integers(1, 50))
def test_adaptation_points_inside_burn_in(B, J):
    if J > B:
        return
    plan = AdaptationPlan(B, J)
    assert plan.points[-1] <= B
    assert np.all(np.diff(plan.points) > 0)


def test_sampler_config_checks():
    with pytest.raises(DomainError):
        SamplerConfig(M=10, B=20)
    with pytest.raises(DomainError):
        SamplerConfig(m=1)


def test_systematic_resample():
    idx = systematic_resample(np.array([0.0, 1.0, 0.0, 3.0]), stream(6))
    assert idx.size == 4 and set(idx) <= {1, 3}
    assert np.sum(idx == 3) == 3
    with pytest.raises(DomainError):
        systematic_resample(np.zeros(3), stream(6))


# --- accept/reject and ABC-MCMC -----------------------------------------------

def test_accept_reject_infinite_tolerance_is_prior(toy):
    model, y0, metric = toy
    res = run_accept_reject(model, y0, metric, math.inf, 5000, 7)
    assert stats.kstest(res.draws[:, 0], "uniform", args=(-3, 6)).pvalue > 0.001
    assert res.tries == 5000 and not res.exhausted


def test_accept_reject_toy(toy):
    model, y0, metric = toy
    res = run_accept_reject(model, y0, metric, EPS, 4000, 8)
    assert np.all(res.discrepancies < EPS)
    want = toy_posterior_mean(0.5, EPS)
    se = res.draws[:, 0].std(ddof=1) / math.sqrt(4000)
    assert abs(res.draws[:, 0].mean() - want) < 3 * se


def test_accept_reject_exhausted(toy):
    model, y0, metric = toy
    res = run_accept_reject(model, y0, metric, 1e-12, 10, 9, max_tries=50)
    assert res.exhausted and res.tries == 50


def test_abc_mcmc_infinite_tolerance_prior_proposal():
    model = GaussianToy(0.0, 1.0, prior="normal")
    y0 = np.array([0.0])
    prop = ProposalSpec.from_prior(model.prior, IS, 1.0)
    out = run_abc_mcmc(model, y0, Metric([[1.0]], y0), math.inf, prop, 500, 10)
    assert out.accepted.all()


def test_abc_mcmc_contract_and_target(toy):
    model, y0, metric = toy
    prop = ProposalSpec(RW, [0.0], [[0.8]])
    out = run_abc_mcmc(model, y0, metric, EPS, prop, 20_000, 11)
    assert_chain_contract(out, model.prior)
    x = out.draws[1000:, 0]
    assert abs(x.mean() - toy_posterior_mean(0.5, EPS)) < 4 * mc_se(x)
    # one simulation per in-support proposal
    assert out.n_sim == int(np.sum(np.abs(out.proposals[:, 0]) < 3))


def test_abc_mcmc_m_schedule_and_freeze(toy):
    model, y0, metric = toy
    schedule = np.geomspace(4.0, EPS, 16)
    plan = AdaptationPlan(3000, 15)
    out = run_abc_mcmc_m(model, y0, metric, schedule, plan, RW,
                         SamplerConfig(M=8000, B=3000), 12)
    assert_chain_contract(out, model.prior)
    assert np.all(np.diff(out.eps) <= 0)
    assert np.all(out.eps[3000:] == EPS)
    assert out.adaptations == list(plan.points)


def test_abc_mcmc_m_constant_schedule(toy):
    model, y0, metric = toy
    out = run_abc_mcmc_m(model, y0, metric, [EPS, EPS], AdaptationPlan(100, 1), IS,
                         SamplerConfig(M=500, B=100), 13)
    assert np.all(out.eps == EPS)
    with pytest.raises(ValueError):
        run_abc_mcmc_m(model, y0, metric, [EPS] * 3, AdaptationPlan(100, 1), IS,
                       SamplerConfig(M=500, B=100), 13)


def test_abc_mcmc_m_determinism(toy):
    model, y0, metric = toy
    args = (model, y0, metric, np.geomspace(4.0, EPS, 16), AdaptationPlan(300, 15), IS,
            SamplerConfig(M=600, B=300))
    a, b = run_abc_mcmc_m(*args, 14), run_abc_mcmc_m(*args, 14)
    assert np.array_equal(a.draws, b.draws) and np.array_equal(a.accepted, b.accepted)


# --- AABC ---------------------------------------------------------------------

def test_aabc_simulation_count_and_history(toy):
    model, y0, metric = toy
    config = SamplerConfig(M=3000, B=1000, N0=200)
    out = run_aabc(model, y0, metric, np.geomspace(4.0, EPS, 16), AdaptationPlan(1000, 15),
                   config, 15)
    assert out.n_sim == 3000
    assert len(out.history) == 200 + 3000
    assert out.flags["start_history"] == 200
    assert_chain_contract(out, model.prior)


def test_aabc_values_are_probabilities(toy):
    model, y0, metric = toy
    out = run_aabc(model, y0, metric, np.full(16, EPS), AdaptationPlan(300, 15),
                   SamplerConfig(M=800, B=300, N0=100), 16)
    v = out.values[~np.isnan(out.values)]
    assert np.all((v >= 0) & (v <= 1))


def brute_h(points, deltas, z, eps):
    d = np.abs(np.asarray(points) - z)
    order = sorted(range(len(points)), key=lambda i: (d[i], i))[:math.isqrt(len(points))]
    return np.mean([deltas[i] < eps for i in order])


@pytest.mark.slow
def test_aabc_exact_on_frozen_history(toy):
    model, y0, metric = toy
    points = [-2.0, -1.0, 0.0, 1.0, 2.0]
    deltas = [0.1, 0.9, 0.2, 0.05, 0.7]
    hist = History(1)
    hist.extend(np.array(points)[:, None], np.array(deltas))
    M, B = 1_000_000, 10_000
    out = run_aabc(model, y0, metric, np.full(16, 0.5), AdaptationPlan(B, 15),
                   SamplerConfig(M=M, B=B), 17, history=hist, frozen=True)
    assert len(hist) == 5 and out.n_sim == 0
    edges = np.linspace(-3, 3, 25)
    fine = np.linspace(-3, 3, 60_001)[:-1] + 0.5e-4
    h = np.array([brute_h(points, deltas, z, 0.5) for z in fine[::50]])
    target = np.histogram(fine[::50], edges, weights=h)[0]
    target /= target.sum()
    emp = np.histogram(out.post_burn[:, 0], edges)[0] / (M - B)
    assert 0.5 * np.abs(emp - target).sum() < 0.02


# --- BSL / ABSL ---------------------------------------------------------------

def ma2_data(seed=0):
    model = MA2()
    return model, model.simulate(model.truth, 200, stream(seed, DATA))


def test_synthetic_loglik_concentrates():
    model, y0 = ma2_data()
    s0 = model.summarize(y0)
    rng = stream(18)
    vals = [synthetic_loglik(s0, model.summarize_many(model.simulate_many(model.truth, 10_000,
                                                                           200, rng)))
            for _ in range(20)]
    assert np.std(vals) < 0.2


def test_bsl_contract():
    model, y0 = ma2_data()
    out = run_bsl(model, y0, RW, SamplerConfig(M=600, B=200, m=20), 19)
    assert_chain_contract(out, model.prior)
    inside = ~np.isnan(out.values)
    assert np.all(np.isfinite(out.values[inside]))
    assert out.n_sim == 20 * int(inside.sum())


def test_absl_simulation_count():
    model, y0 = ma2_data()
    out = run_absl(model, y0, SamplerConfig(M=500, B=200, m=20, N0=50), 20)
    assert out.n_sim == 20 * 500
    assert out.n_sim_setup >= 20 * 50
    assert len(out.history) == 550
    assert_chain_contract(out, model.prior)


def test_absl_single_entry_matches_block_gaussian():
    model, y0 = ma2_data()
    sim = Simulator(model, y0, stream(21))
    zeta = model.truth
    block = sim.summaries(zeta, 30)
    hist = History(2, block.shape, center=sim.s0)
    hist.append(zeta, block)
    mu, sigma = hist.moments_hat(zeta)
    # one entry: weights collapse to that block's moments with divisor m
    want = mvn_logpdf(sim.s0, block.mean(axis=0), np.cov(block, rowvar=False, ddof=0))
    assert mvn_logpdf(sim.s0, mu, sigma) == pytest.approx(want, abs=1e-8)
    # the fresh-sample synthetic likelihood uses divisor m - 1 instead
    unbiased = mvn_logpdf(sim.s0, block.mean(axis=0), np.cov(block, rowvar=False))
    assert synthetic_loglik(sim.s0, block) == pytest.approx(unbiased, abs=1e-8)


def test_initial_bsl_history_layout():
    model, y0 = ma2_data()
    sim = Simulator(model, y0, stream(22))
    hist = initial_bsl_history(sim, 10, 5, stream(23))
    assert len(hist) == 10 and hist.payload.shape == (10, 5, 3)
    assert sim.calls == 50


# --- SMC ----------------------------------------------------------------------

def test_smc_one_level_is_accept_reject(toy):
    model, y0, metric = toy
    res = run_abc_smc(model, y0, metric, [EPS], 24, n_particles=300)
    ar = run_accept_reject(model, y0, metric, EPS, 300, stream(24, CHAIN))
    assert np.array_equal(res.particles, ar.draws)


def test_smc_particle_count(toy):
    model, y0, metric = toy
    res = run_abc_smc(model, y0, metric, np.geomspace(4.0, EPS, 6), 25, n_particles=200)
    assert res.particles.shape == (200, 1)
    assert len(res.alive) == 5 and len(res.move_rate) == 5
    assert np.all(res.discrepancies < EPS)


def test_smc_degeneracy(toy):
    model, y0, metric = toy
    with pytest.raises(ParticleDegeneracy):
        run_abc_smc(model, y0, metric, [4.0, 1e-14], 26, n_particles=50)


# --- exact and particle baselines ---------------------------------------------

def test_exact_ma2():
    model, y0 = ma2_data(1)
    out = run_exact_ma2(y0, SamplerConfig(M=5000, B=2000), 27)
    assert_chain_contract(out, model.prior)
    assert np.all(np.abs(out.post_burn.mean(axis=0) - model.truth) < 0.15)
    assert 0.1 < out.acceptance_rate < 0.6


def test_pf_close_to_kalman():
    hmm = LinearGaussianHMM()
    theta = (0.8, 0.5, 1.0)
    y = hmm.simulate(theta, 50, stream(28))
    est = [bootstrap_pf_loglik(hmm, y, theta, 500, stream(29, k)) for k in range(20)]
    se = np.std(est, ddof=1) / math.sqrt(len(est))
    assert abs(np.mean(est) - kalman_loglik(y, theta)) < 4 * se + 0.05


def test_pf_variance_shrinks_with_particles():
    model = SVGaussian()
    y = model.simulate(model.truth, 100, stream(30))
    sd = [np.std([bootstrap_pf_loglik(model.hmm, y, model.truth, P, stream(31, k))
                  for k in range(30)]) for P in (10, 100)]
    assert sd[1] < sd[0]
    assert np.isfinite(bootstrap_pf_loglik(model.hmm, y, model.truth, 1, stream(32)))


def test_pf_zero_weights():
    model = Ricker()
    # positive counts are impossible when every hidden state is zero
    class Dead:
        def initial_sample(self, theta, size, rng):
            return np.zeros(size)

        def transition_sample(self, x, theta, rng):
            return x

        emission_logpdf = staticmethod(model.hmm.emission_logpdf)

    assert bootstrap_pf_loglik(Dead(), np.array([0.0, 2.0]), model.truth, 10,
                               stream(33)) == -math.inf


def test_pmcmc_pseudo_marginal_calls():
    model = SVGaussian()
    y = model.simulate(model.truth, 60, stream(34))
    out = run_pmcmc(model, y, SamplerConfig(M=300, B=100), 35, P=20)
    inside = int(np.sum(~np.isnan(out.values)))
    assert out.flags["filter_calls"] == inside + 1
    assert_chain_contract(out, model.prior)


def test_pmcmc_rejects_minus_inf():
    class Flat(SVGaussian):
        class hmm:
            initial_sample = staticmethod(lambda theta, size, rng: np.zeros(size))
            transition_sample = staticmethod(lambda x, theta, rng: x)
            emission_logpdf = staticmethod(lambda y, x, theta: np.full(np.shape(x), -np.inf))

    out = run_pmcmc(Flat(), np.zeros(5), SamplerConfig(M=50, B=20), 36, P=5)
    assert not out.accepted.any()


@pytest.mark.slow
def test_pmcmc_svg_posterior():
    model = SVGaussian()
    y = model.simulate(model.truth, 500, stream(37, DATA))
    out = run_pmcmc(model, y, SamplerConfig(M=3000, B=1000), 38, P=100)
    assert abs(out.post_burn[:, 0].mean() - 0.95) < 0.1
