"""Fatigue-life regression of asphalt concrete with feedforward networks."""

__version__ = "0.1.0"
