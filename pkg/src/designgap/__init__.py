"""Exact moment-operator numerics for unitary designs from random circuits."""

__version__ = "0.1.0"
