"""Sub-sample peak location by parabolic interpolation."""

from typing import Optional, Tuple

import numpy as np

from swe_elastography.types import PeakEstimate

MAX_OFFSET = 0.5


def parabolic_offset(left: float, center: float, right: float) -> float:
    """Vertex offset of the parabola through (-1, left), (0, center), (1, right), clamped to +-0.5."""
    denominator = 2.0 * (left - 2.0 * center + right)
    if denominator == 0.0:
        return 0.0
    offset = (left - right) / denominator
    return float(np.clip(offset, -MAX_OFFSET, MAX_OFFSET))


def subsample_peak(values: np.ndarray) -> PeakEstimate:
    """Locate the maximum of a sampled profile with sub-sample precision.

    Args:
        values: Profile of at least 3 samples

    Returns:
        PeakEstimate whose ``position`` is a fractional index into ``values``;
        a peak on the first or last sample is returned unrefined

    Raises:
        ValueError: If the profile has fewer than 3 samples
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size < 3:
        raise ValueError(f"profile needs at least 3 samples, got shape {values.shape}")
    index = int(np.argmax(values))
    peak = float(values[index])
    if index == 0 or index == values.size - 1:
        return PeakEstimate(position=float(index), index=index, refined=False, value=peak)
    left, right = float(values[index - 1]), float(values[index + 1])
    if left - 2.0 * peak + right == 0.0:
        return PeakEstimate(position=float(index), index=index, refined=False, value=peak)
    return PeakEstimate(
        position=index + parabolic_offset(left, peak, right),
        index=index,
        refined=True,
        value=peak,
    )


def subsample_peaks(
    profiles: np.ndarray, skip_above: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``subsample_peak`` applied along the last axis of a stack of profiles.

    Args:
        profiles: Array [..., n] with n >= 3
        skip_above: Peaks at or above this value are left unrefined

    Returns:
        (fractional positions, peak values, refined flags)
    """
    profiles = np.asarray(profiles, dtype=float)
    n = profiles.shape[-1]
    if n < 3:
        raise ValueError(f"profiles need at least 3 samples, got {n}")
    index = np.argmax(profiles, axis=-1)
    peak = np.take_along_axis(profiles, index[..., None], axis=-1)[..., 0]
    left = np.take_along_axis(profiles, np.clip(index - 1, 0, n - 1)[..., None], axis=-1)[..., 0]
    right = np.take_along_axis(profiles, np.clip(index + 1, 0, n - 1)[..., None], axis=-1)[..., 0]
    denominator = 2.0 * (left - 2.0 * peak + right)
    refined = (index > 0) & (index < n - 1) & (denominator != 0.0)
    if skip_above is not None:
        refined &= peak < skip_above
    offset = np.divide(left - right, denominator, out=np.zeros(peak.shape), where=refined)
    return index + np.clip(offset, -MAX_OFFSET, MAX_OFFSET), peak, refined
