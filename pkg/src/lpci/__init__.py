"""Coverage-error-optimal confidence intervals for local polynomial regression."""

__version__ = "0.1.0"
