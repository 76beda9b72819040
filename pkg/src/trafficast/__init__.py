"""Deep-cluster based short-term traffic prediction."""

__version__ = "0.1.0"
