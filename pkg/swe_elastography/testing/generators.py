"""Hypothesis generators and synthetic data for property-based testing."""

from typing import Optional

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import convolve1d, gaussian_filter1d

from swe_elastography.types import (
    DisplacementStack,
    ElasticityMap,
    InclusionSpec,
    PhantomSpec,
    ScanGeometry,
)

# 40 MHz sampling of a 7 MHz, 60 % bandwidth pulse
SPECKLE_WAVELENGTH_SAMPLES = 40e6 / 7e6
SPECKLE_SIGMA_SAMPLES = 3.57


def small_geometry(
    n_frames: int = 30,
    n_lateral: int = 32,
    n_axial: int = 200,
    **overrides,
) -> ScanGeometry:
    """A desk-scale geometry with the push line in the middle."""
    return ScanGeometry(n_axial=n_axial, n_lateral=n_lateral, n_frames=n_frames, **overrides)


def speckle_frame(
    n_lateral: int,
    n_axial: int,
    seed: int = 0,
    wavelength: float = SPECKLE_WAVELENGTH_SAMPLES,
    sigma: float = SPECKLE_SIGMA_SAMPLES,
    lateral_sigma: float = 1.0,
) -> np.ndarray:
    """Fully developed RF speckle: white scatterers convolved with a Gabor pulse."""
    rng = np.random.default_rng(seed)
    scatterers = rng.standard_normal((n_lateral, n_axial))
    half = int(np.ceil(4 * sigma))
    t = np.arange(-half, half + 1)
    pulse = np.exp(-0.5 * (t / sigma) ** 2) * np.cos(2 * np.pi * t / wavelength)
    rf = convolve1d(scatterers, pulse, axis=1, mode="wrap")
    if lateral_sigma > 0:
        rf = gaussian_filter1d(rf, lateral_sigma, axis=0, mode="wrap")
    return rf


def shift_frame(frame: np.ndarray, shift: float) -> np.ndarray:
    """Move the content of every line ``shift`` samples deeper (circularly).

    Integer shifts are exact rolls; fractional shifts use a Fourier phase ramp.
    """
    frame = np.asarray(frame, dtype=float)
    if float(shift).is_integer():
        return np.roll(frame, int(shift), axis=1)
    n = frame.shape[1]
    freqs = np.fft.rfftfreq(n)
    spectrum = np.fft.rfft(frame, axis=1) * np.exp(-2j * np.pi * freqs * shift)
    return np.fft.irfft(spectrum, n=n, axis=1)


def traveling_wave_stack(
    geometry: ScanGeometry,
    speed: float,
    amplitude: float = 1e-5,
    arrival: float = 1e-3,
    width: float = 3e-4,
) -> DisplacementStack:
    """Analytic outward wave u(x, t) = A g(t - |x - x0| / c) with a Gaussian g.

    Frame 0 is forced to zero.
    """
    times = geometry.frame_times()[:, None, None]
    offsets = np.abs(np.arange(geometry.n_lateral) - geometry.push_lateral_index) * geometry.lateral_pitch
    delay = (offsets / speed)[None, :, None]
    axial = amplitude * np.exp(-(((times - arrival - delay) / width) ** 2))
    axial = np.broadcast_to(axial, geometry.shape).copy()
    axial[0] = 0.0
    return DisplacementStack(geometry=geometry, axial=axial)


# Strategies

youngs_background = st.floats(min_value=15e3, max_value=30e3, allow_nan=False)
stiffness_ratio = st.floats(min_value=1.6, max_value=3.9, allow_nan=False)
inclusion_radius = st.floats(min_value=1.5e-3, max_value=5e-3, allow_nan=False)


@st.composite
def phantom_spec_generator(draw, with_inclusion: Optional[bool] = None):
    """Generate valid PhantomSpec instances."""
    background = draw(youngs_background)
    if with_inclusion is None:
        with_inclusion = draw(st.booleans())
    inclusion = None
    if with_inclusion:
        radius = draw(inclusion_radius)
        inclusion = InclusionSpec(
            center_axial=draw(st.floats(min_value=radius, max_value=0.035 - radius)),
            center_lateral=draw(st.floats(min_value=radius, max_value=0.025 - radius)),
            radius=radius,
            youngs=background * draw(stiffness_ratio),
        )
    return PhantomSpec(background_youngs=background, inclusion=inclusion)


@st.composite
def elasticity_map_generator(draw, n_lateral: int = 12, n_axial: int = 12, valid_fraction: float = 0.8):
    """Generate ElasticityMap instances with a random validity mask."""
    values = draw(arrays(
        np.float64, (n_lateral, n_axial),
        elements=st.floats(min_value=1e3, max_value=1e5, allow_nan=False, allow_infinity=False),
    ))
    seed = draw(st.integers(min_value=0, max_value=2 ** 32 - 1))
    valid = np.random.default_rng(seed).random((n_lateral, n_axial)) < valid_fraction
    return ElasticityMap(values=np.where(valid, values, 0.0), valid=valid)


@st.composite
def profile_generator(draw, min_size: int = 8, max_size: int = 40):
    """Generate non-constant displacement-time profiles."""
    size = draw(st.integers(min_value=min_size, max_value=max_size))
    profile = draw(arrays(
        np.float64, size,
        elements=st.floats(min_value=-1e-5, max_value=1e-5, allow_nan=False, allow_infinity=False),
    ))
    if np.ptp(profile) == 0 or np.max(np.abs(profile)) < 1e-7:
        profile = profile.copy()
        profile[size // 2] += 1e-6
    return profile
