"""Synthetic eye-movement velocity series from GANs, hidden Markov models and KDE Markov chains."""

__version__ = "0.1.0"
