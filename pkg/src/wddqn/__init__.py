"""Weighted double deep Q-networks for cooperative multiagent gridworlds."""

__version__ = "0.1.0"
