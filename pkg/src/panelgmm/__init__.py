"""Dynamic panel econometrics: static estimators, one-step difference GMM and diagnostics."""
__version__ = "0.1.0"
