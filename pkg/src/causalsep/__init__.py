"""Causal separability of quantum process matrices by semidefinite programming."""

__version__ = "0.1.0"
