"""Desk-scale lab for learning with mixed in- and out-of-distribution label noise."""

__version__ = "0.1.0"
