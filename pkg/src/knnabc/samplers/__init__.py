"""MCMC, rejection and SMC samplers sharing one Metropolis-Hastings core."""

from .abc import (ParticleDegeneracy, run_aabc, run_abc_mcmc, run_abc_mcmc_m, run_abc_smc,
                  run_accept_reject)
from .bsl import run_absl, run_bsl, synthetic_loglik
from .core import (IS, RW, AdaptationPlan, ChainOutput, ProposalSpec, SamplerConfig,
                   adapt_proposal, mh_accept)
from .exact import bootstrap_pf_loglik, run_exact_ma2, run_pmcmc
