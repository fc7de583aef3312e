"""Lateral control of a connected vehicle platoon that follows communicated trajectories."""

__version__ = "0.1.0"
