"""Continual multi-task RL with self-supervised task inference from demonstrations."""

__version__ = "0.1.0"
