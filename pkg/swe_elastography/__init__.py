"""Shear-wave elastography: wave and RF simulation, speckle tracking and time-of-flight reconstruction."""

__version__ = "0.1.0"
