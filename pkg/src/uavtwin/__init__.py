"""Desk-scale digital twin for RL-driven UAV placement over a synthetic city."""

__version__ = "0.1.0"
