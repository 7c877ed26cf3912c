"""Config-driven model instantiation, profiling, and training worker."""

__version__ = "0.1.0"
