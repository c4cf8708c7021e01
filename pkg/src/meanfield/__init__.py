"""Mean-field limit simulation and verification toolkit."""

__version__ = "0.1.0"
