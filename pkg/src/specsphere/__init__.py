"""Dual-branch (spectral + spatial) graph classifier with adversarial training and certificates."""
