"""ABC and synthetic-likelihood MCMC with kNN recycling of past simulations."""

__version__ = "0.1.0"
