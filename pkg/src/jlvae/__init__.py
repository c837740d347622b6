"""Contextual anomaly detection with a cross-linked pair of variational autoencoders."""

__version__ = "0.1.0"
