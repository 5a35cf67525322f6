"""Simulation lab for interactive coding over oblivious, unbounded channel noise."""

__version__ = "0.1.0"
