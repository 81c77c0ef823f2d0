"""Time-of-flight shear-wave-speed and Young's modulus reconstruction.

For every depth and lateral line, the displacement-versus-time profile is
cross-correlated with the profile of the neighbouring line further from the
push. The correlation peak gives the arrival-time difference and
speed = distance / delay.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter1d

from swe_elastography.config import TofConfig
from swe_elastography.core.peak import subsample_peak, subsample_peaks
from swe_elastography.exceptions import ConfigurationError, ReconstructionError
from swe_elastography.types import (
    DisplacementStack,
    ElasticityMap,
    NccProfile,
    ScanGeometry,
    SWSMap,
    TimeLag,
)

logger = logging.getLogger(__name__)

# |delta t| below this is treated as zero (s).
MIN_TIME_LAG = 1e-12


def _overlap_correlation(
    f: np.ndarray, g: np.ndarray, max_lag: int, one_sided_denominator: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """Correlation over the time axis (axis 0) for lags -max_lag..max_lag.

    Returns:
        (values [2*max_lag+1, ...], degenerate mask [...])
    """
    n = f.shape[0]
    values = np.zeros((2 * max_lag + 1,) + f.shape[1:])
    for offset, lag in enumerate(range(-max_lag, max_lag + 1)):
        if lag >= 0:
            a, b = f[: n - lag], g[lag:]
            b_energy_source = f[lag:]
        else:
            a, b = f[-lag:], g[: n + lag]
            b_energy_source = f[: n + lag]
        numerator = np.sum(a * b, axis=0)
        second = b_energy_source if one_sided_denominator else b
        denominator = np.sqrt(np.sum(a * a, axis=0) * np.sum(second * second, axis=0))
        values[offset] = np.divide(
            numerator, denominator, out=np.zeros(numerator.shape), where=denominator > 0
        )
    degenerate = ~np.any(f != 0, axis=0) | ~np.any(g != 0, axis=0)
    values = np.where(degenerate, 0.0, values)
    return values, degenerate


def lateral_xcorr(
    f_l: np.ndarray, f_next: np.ndarray, max_lag: int, one_sided_denominator: bool = False
) -> NccProfile:
    """Normalised correlation of two displacement-time profiles.

    C(j) = sum f_l(t_i) f_next(t_{i+j}) / sqrt(sum f_l(t_i)^2 * sum f_next(t_{i+j})^2),
    each sum taken over the samples where both indices are in range. In
    one-sided mode the second energy sum uses f_l(t_{i+j}) instead.

    Args:
        f_l: Profile at the line nearer the push
        f_next: Profile at the line further out
        max_lag: Largest lag in frames
        one_sided_denominator: Use f_l in both energy sums

    Returns:
        NccProfile for lags -max_lag..max_lag; an all-zero input is flagged degenerate

    Raises:
        ValueError: On profiles of different length or shorter than 3 samples
    """
    f_l = np.asarray(f_l, dtype=float)
    f_next = np.asarray(f_next, dtype=float)
    if f_l.shape != f_next.shape or f_l.ndim != 1 or f_l.size < 3:
        raise ValueError("profiles must be 1D, of equal length and at least 3 samples")
    if max_lag >= f_l.size:
        raise ValueError(f"max_lag {max_lag} must be smaller than the profile length {f_l.size}")
    values, degenerate = _overlap_correlation(f_l, f_next, max_lag, one_sided_denominator)
    return NccProfile(values=values, degenerate=bool(degenerate))


def estimate_time_lag(profile: np.ndarray, prf: float, degenerate: bool = False) -> TimeLag:
    """Arrival-time difference at the correlation peak.

    Args:
        profile: Correlation values for lags -m..m (or an NccProfile)
        prf: Frame rate (Hz)
        degenerate: Input already known to be degenerate

    Returns:
        TimeLag; a flat or degenerate profile gives an invalid (NaN) delay
    """
    if isinstance(profile, NccProfile):
        degenerate = degenerate or profile.degenerate
        profile = profile.values
    values = np.asarray(profile, dtype=float)
    if values.size == 0:
        raise ValueError("empty correlation profile")
    max_lag = (values.size - 1) // 2
    if degenerate or np.ptp(values) == 0:
        return TimeLag(delta_t=math.nan, lag_frames=math.nan, quality=0.0, refined=False, degenerate=True)
    peak = subsample_peak(values)
    lag = peak.position - max_lag
    return TimeLag(delta_t=lag / prf, lag_frames=lag, quality=peak.value, refined=peak.refined)


def young_from_sws(sws: SWSMap, density: float) -> ElasticityMap:
    """Young's modulus E = 3 rho c^2 on valid pixels (incompressible limit)."""
    if not density > 0:
        raise ReconstructionError(f"density must be > 0, got {density}")
    values = np.where(sws.valid, 3.0 * density * np.asarray(sws.speed) ** 2, 0.0)
    return ElasticityMap(values=values, valid=np.array(sws.valid), geometry=sws.geometry)


def median_filter(emap: ElasticityMap, kernel: int = 9, chunk_lines: int = 16) -> ElasticityMap:
    """Median over the valid pixels of each k x k neighbourhood.

    The median of an even number of values is the mean of the two middle
    ones. A pixel is valid afterwards iff at least ceil(k^2 / 4) of its
    neighbours were valid.

    Raises:
        ReconstructionError: If k is not a positive odd number
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ReconstructionError(f"median kernel must be odd, got {kernel}")
    half = kernel // 2
    min_count = math.ceil(kernel * kernel / 4)
    values = np.where(emap.valid, emap.values, np.nan)
    padded = np.pad(values, half, mode="constant", constant_values=np.nan)

    out = np.zeros(values.shape)
    valid = np.zeros(values.shape, dtype=bool)
    for start in range(0, values.shape[0], chunk_lines):
        stop = min(start + chunk_lines, values.shape[0])
        block = padded[start:stop + 2 * half]
        windows = sliding_window_view(block, (kernel, kernel)).reshape(stop - start, values.shape[1], -1)
        ordered = np.sort(windows, axis=-1)
        count = np.sum(~np.isnan(ordered), axis=-1)
        ok = count >= max(min_count, 1)
        low = np.take_along_axis(ordered, np.maximum((count - 1) // 2, 0)[..., None], axis=-1)[..., 0]
        high = np.take_along_axis(ordered, np.maximum(count // 2, 0)[..., None], axis=-1)[..., 0]
        out[start:stop] = np.where(ok, (low + high) / 2.0, 0.0)
        valid[start:stop] = ok
    return ElasticityMap(values=out, valid=valid, geometry=emap.geometry)


def focal_exclusion_mask(geometry: ScanGeometry, config: Optional[TofConfig] = None) -> np.ndarray:
    """Columns within ``focal_exclusion_halfwidth`` of the push line ([lateral][axial])."""
    config = config or TofConfig()
    offset = np.abs(np.arange(geometry.n_lateral) - geometry.push_lateral_index) * geometry.lateral_pitch
    columns = offset <= config.focal_exclusion_halfwidth + 1e-12
    return np.repeat(columns[:, None], geometry.n_axial, axis=1)


@dataclass
class Reconstruction:
    """Speed map, raw and median-filtered modulus maps and the focal exclusion."""

    sws: SWSMap
    youngs_raw: ElasticityMap
    youngs: ElasticityMap
    exclusion: np.ndarray

    def valid_fraction(self) -> float:
        return self.youngs.valid_fraction(self.exclusion)


class SwsReconstructor:
    """Builds SWS and Young's modulus maps from a displacement stack."""

    def __init__(self, config: Optional[TofConfig] = None, density: float = 1000.0):
        """Initialize SwsReconstructor.

        Args:
            config: Time-of-flight settings
            density: Tissue density used for E = 3 rho c^2 (kg/m^3)
        """
        self.config = config or TofConfig()
        self.density = density

    def partner_columns(self, geometry: ScanGeometry) -> Tuple[np.ndarray, np.ndarray]:
        """Outward partner of every column and whether it exists."""
        columns = np.arange(geometry.n_lateral)
        step = self.config.lane_distance
        partners = np.where(columns >= geometry.push_lateral_index, columns + step, columns - step)
        exists = (partners >= 0) & (partners < geometry.n_lateral)
        return np.clip(partners, 0, geometry.n_lateral - 1), exists

    def sws_map(self, displacement: DisplacementStack, geometry: Optional[ScanGeometry] = None) -> SWSMap:
        """Per-pixel shear-wave speed.

        Args:
            displacement: Axial displacement movie
            geometry: Scan geometry (the displacement's when omitted)

        Returns:
            SWSMap [lateral][axial]; pixels with no partner column, a peak on the
            lag boundary, zero or negative delay, low peak correlation or
            out-of-range speed are invalid

        Raises:
            ReconstructionError: On too few frames or a push line outside the grid
            ConfigurationError: If max_lag_frames does not fit the sequence
        """
        cfg = self.config
        geometry = geometry or displacement.geometry
        if displacement.n_frames < 2:
            raise ReconstructionError("need at least 2 frames for time-of-flight")
        if not 0 <= geometry.push_lateral_index < geometry.n_lateral:
            raise ReconstructionError(f"push line {geometry.push_lateral_index} outside the grid")
        cfg.check_frames(displacement.n_frames)

        profiles = np.asarray(displacement.axial, dtype=float)
        if cfg.axial_average_halfwidth > 0:
            profiles = uniform_filter1d(profiles, size=2 * cfg.axial_average_halfwidth + 1, axis=2, mode="nearest")

        partners, has_partner = self.partner_columns(geometry)
        values, degenerate = _overlap_correlation(
            profiles, profiles[:, partners, :], cfg.max_lag_frames, cfg.one_sided_denominator
        )
        flat = np.ptp(values, axis=0) == 0
        positions, quality, interior = subsample_peaks(np.moveaxis(values, 0, -1))
        lag_frames = positions - cfg.max_lag_frames
        time_lag = lag_frames / geometry.prf

        distance = cfg.lane_distance * geometry.lateral_pitch
        positive = time_lag > MIN_TIME_LAG
        speed = np.divide(distance, time_lag, out=np.zeros(time_lag.shape), where=positive)
        low, high = cfg.valid_speed_range
        valid = (
            has_partner[:, None] & ~degenerate & ~flat & interior & positive
            & (quality >= cfg.min_peak_corr) & (speed >= low) & (speed <= high)
        )
        logger.info(f"SWS map: {valid.mean():.1%} valid pixels")
        return SWSMap(
            speed=np.where(valid, speed, 0.0),
            peak_corr=quality,
            valid=valid,
            time_lag=np.where(valid, time_lag, np.nan),
            geometry=geometry,
        )

    def reconstruct(self, displacement: DisplacementStack, median_kernel: Optional[int] = None) -> Reconstruction:
        """SWS map, modulus map and its median-filtered version.

        Raises:
            ReconstructionError: If no pixel outside the focal exclusion is valid
        """
        kernel = self.config.median_kernel if median_kernel is None else median_kernel
        try:
            sws = self.sws_map(displacement)
        except (ReconstructionError, ConfigurationError):
            raise
        except Exception as e:
            raise ReconstructionError(f"Failed to build SWS map: {str(e)}") from e

        exclusion = focal_exclusion_mask(sws.geometry, self.config)
        raw = young_from_sws(sws, self.density)
        filtered = median_filter(raw, kernel)
        if not np.any(filtered.valid & ~exclusion):
            raise ReconstructionError("reconstruction is degenerate: no valid pixel outside the focal exclusion")
        return Reconstruction(sws=sws, youngs_raw=raw, youngs=filtered, exclusion=exclusion)
