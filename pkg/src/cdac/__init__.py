"""Context-dependent active sensing: exact and approximate Bayes-risk control."""

__version__ = "0.1.0"
