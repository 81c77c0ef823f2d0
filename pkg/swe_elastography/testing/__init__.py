"""Testing utilities for the shear-wave elastography toolkit."""

from .generators import (
    elasticity_map_generator,
    phantom_spec_generator,
    profile_generator,
    shift_frame,
    small_geometry,
    speckle_frame,
    traveling_wave_stack,
)

__all__ = [
    "elasticity_map_generator",
    "phantom_spec_generator",
    "profile_generator",
    "shift_frame",
    "small_geometry",
    "speckle_frame",
    "traveling_wave_stack",
]
