"""Fuel-optimal low-thrust transfers, second-order optimality checks and
neighboring optimal guidance."""

__version__ = "0.1.0"
