"""Distributed finite-time power apportioning for DER fleets."""

__version__ = "0.1.0"
