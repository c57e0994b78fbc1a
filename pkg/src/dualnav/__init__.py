"""Dual-rate pixel-goal navigation: oracle planner, flow-matching trajectory policy, executor and benchmark."""

__version__ = "0.1.0"
