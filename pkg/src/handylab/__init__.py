"""Data-assimilation laboratory for the commoners/elites/nature/wealth ODE
family: simulation, likelihood-free inference, variance-based sensitivity
analysis, coupled-ensemble (supermodel) forecasting and a reproducible
experiment harness."""

__version__ = "0.1.0"
