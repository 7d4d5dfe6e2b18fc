"""kincal: Bayesian calibration of chemical kinetic mechanisms.

Samples the posterior of reaction-rate parameters conditioned on 0D-reactor
experiments with an affine-invariant ensemble MCMC sampler, and propagates
the posterior through prediction cases.
"""

__version__ = "0.1.0"
