"""Bolt rotation estimation by feature tracking."""

__version__ = "0.1.0"
