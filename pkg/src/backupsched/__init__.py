"""Backup rotation scheduling: simulator, schemes, DDPG agent, evaluation and attack simulation."""

__version__ = "0.1.0"
