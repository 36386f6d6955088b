"""Stochastic latent transformer emulation of beta-plane zonal jets."""

__version__ = "0.1.0"
