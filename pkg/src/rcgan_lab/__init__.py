"""Desk-scale toolkit for penalty-regularized cycle-consistent GAN anomaly detection."""

__version__ = "0.1.0"
