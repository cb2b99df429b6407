"""Blind two-port separation of transmitted and incident signals for spectrum monitoring."""

__version__ = "0.1.0"
