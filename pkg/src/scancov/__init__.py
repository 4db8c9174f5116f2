"""Scan statistic tail probabilities from moving-sum covariances."""
__version__ = "0.1.0"
