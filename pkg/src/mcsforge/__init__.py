"""Teammate-policy generation with coverage constraints, plus ad hoc teamwork training and evaluation."""

__version__ = "0.1.0"
