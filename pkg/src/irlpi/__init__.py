"""Integral reinforcement learning policy iteration under unsymmetrical input bounds."""

__version__ = "0.1.0"
