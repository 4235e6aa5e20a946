"""Delay-aware transient stability assessment."""

__version__ = "0.1.0"
