"""Grouped multi-agent RL for grid-based mobility rebalancing."""

__version__ = "0.1.0"
