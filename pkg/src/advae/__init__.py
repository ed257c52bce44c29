"""Variational autoencoders trained through two adversarial KL games."""
__version__ = "0.1.0"
