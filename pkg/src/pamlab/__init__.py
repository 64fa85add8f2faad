"""Simulation and verification laboratory for the parabolic Anderson model.

The model is the stochastic heat equation du = (1/2) u'' dt + u dW with
space-time white noise and a Dirac delta at the origin as initial condition.
The package provides exact quadrature oracles for its closed-form moments,
a Monte Carlo solver on a truncated grid together with an exactly sampled
Gaussian proxy field, and a statistics harness that confronts simulated
spatial averages with the oracles: variance asymptotics, central limit
behaviour, finite-dimensional covariances, ergodic decay, and the
small-time roughness statistic.
"""

__version__ = "0.1.0"
