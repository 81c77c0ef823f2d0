"""Windowed normalised cross-correlation speckle tracking."""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from tqdm import tqdm

from swe_elastography.config import NccConfig
from swe_elastography.core.peak import subsample_peaks
from swe_elastography.exceptions import ConfigurationError, TrackingError
from swe_elastography.types import DisplacementStack, FrameStack, NccProfile, TrackingResult

logger = logging.getLogger(__name__)


def ncc_profile(ref_window: np.ndarray, search_segment: np.ndarray, max_lag: int) -> NccProfile:
    """Normalised cross-correlation of a window against a search segment.

    ``search_segment[max_lag + j : max_lag + j + len(ref_window)]`` is the
    candidate for lag j, so a segment delayed by d samples peaks at j = d.

    Args:
        ref_window: Reference window
        search_segment: Segment of at least len(ref_window) + 2*max_lag samples
        max_lag: Largest lag searched in each direction

    Returns:
        NccProfile for lags -max_lag..max_lag; a constant reference window
        yields an all-zero profile flagged degenerate

    Raises:
        ValueError: If the segment is too short
    """
    window = np.asarray(ref_window, dtype=float)
    segment = np.asarray(search_segment, dtype=float)
    length = window.size
    if segment.size < length + 2 * max_lag:
        raise ValueError(
            f"search segment of {segment.size} samples is shorter than window + 2*max_lag = {length + 2 * max_lag}"
        )
    n_lags = 2 * max_lag + 1
    if np.ptp(window) == 0:
        return NccProfile(values=np.zeros(n_lags), degenerate=True)

    centred = window - window.mean()
    windows = sliding_window_view(segment, length)[:n_lags]
    flat = np.ptp(windows, axis=1) == 0
    candidates = windows - windows.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(candidates ** 2, axis=1)) * np.sqrt(np.sum(centred ** 2))
    values = np.divide(candidates @ centred, norms, out=np.zeros(n_lags), where=~flat)
    return NccProfile(values=values, degenerate=False)


class NccTracker:
    """Tracks axial displacement of every frame against frame 0 with windowed NCC."""

    def __init__(self, config: Optional[NccConfig] = None, show_progress: bool = False):
        """Initialize NccTracker.

        Args:
            config: Window, hop, search range and worker count
            show_progress: Show a tqdm bar over frames
        """
        self.config = config or NccConfig()
        self.show_progress = show_progress

    def window_centers(self, n_axial: int) -> np.ndarray:
        """Axial indices of the window centres whose search segments fit in the line."""
        cfg = self.config
        self.config.check_fits(n_axial)
        half = (cfg.window_len - 1) // 2
        first = half + cfg.max_lag
        last = n_axial - 1 - half - cfg.max_lag
        return np.arange(first, last + 1, cfg.window_hop)

    def estimate_lags(self, reference: np.ndarray, frame: np.ndarray) -> np.ndarray:
        """Fractional lags (samples) at every window centre of every line.

        Returns:
            Array [lateral][centre]
        """
        cfg = self.config
        length, max_lag = cfg.window_len, cfg.max_lag
        half = (length - 1) // 2
        centers = self.window_centers(reference.shape[1])
        starts = centers - half

        ref_windows = sliding_window_view(np.asarray(reference, float), length, axis=1)[:, starts, :]
        ref_centred = ref_windows - ref_windows.mean(axis=2, keepdims=True)
        ref_norm = np.sqrt(np.sum(ref_centred ** 2, axis=2))
        ref_flat = np.ptp(ref_windows, axis=2) == 0

        frame_windows = sliding_window_view(np.asarray(frame, float), length, axis=1)
        profiles = np.zeros(ref_norm.shape + (2 * max_lag + 1,))
        for offset, lag in enumerate(range(-max_lag, max_lag + 1)):
            candidates = frame_windows[:, starts + lag, :]
            flat = np.ptp(candidates, axis=2) == 0
            centred = candidates - candidates.mean(axis=2, keepdims=True)
            norm = np.sqrt(np.sum(centred ** 2, axis=2)) * ref_norm
            ok = ~(flat | ref_flat)
            profiles[..., offset] = np.divide(
                np.sum(centred * ref_centred, axis=2), norm, out=np.zeros(norm.shape), where=ok
            )

        lags = self.refine_peaks(profiles) - max_lag
        lags[ref_flat] = 0.0
        if np.any(ref_flat):
            logger.debug(f"{int(ref_flat.sum())} constant reference windows tracked as zero lag")
        return lags

    def refine_peaks(self, profiles: np.ndarray) -> np.ndarray:
        """Fractional peak index of every profile along the last axis.

        Peaks at or above 1 - exact_match_tol are perfect matches of an
        integer shift and are returned unrefined.
        """
        positions, _, _ = subsample_peaks(profiles, skip_above=1.0 - self.config.exact_match_tol)
        return positions

    def track_frame(self, reference: np.ndarray, frame: np.ndarray, axial_spacing: float) -> np.ndarray:
        """Dense axial displacement (m) of one frame relative to the reference."""
        lags = self.estimate_lags(reference, frame)
        centers = self.window_centers(reference.shape[1])
        axis = np.arange(reference.shape[1])
        dense = np.empty(reference.shape)
        for line in range(reference.shape[0]):
            dense[line] = np.interp(axis, centers, lags[line])
        return dense * axial_spacing

    def track(self, stack: FrameStack) -> TrackingResult:
        """Track every frame of a sequence against frame 0.

        Frames are independent and processed by ``config.workers`` threads.

        Raises:
            ConfigurationError: If the windows do not fit the frames
            TrackingError: If a frame fails, naming the frame index
        """
        geometry = stack.geometry
        if stack.n_frames < 2:
            raise TrackingError("need at least 2 frames to track")
        self.window_centers(geometry.n_axial)

        axial = np.zeros(geometry.shape)
        reference = stack.reference
        spacing = geometry.axial_spacing
        frame_indices = list(range(1, stack.n_frames))
        logger.info(f"NCC tracking {len(frame_indices)} frames with {self.config.workers} worker(s)")

        progress = tqdm(total=len(frame_indices), desc="ncc", unit="frame", disable=not self.show_progress)
        with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
            future_to_frame: Dict = {
                executor.submit(self.track_frame, reference, stack.frame(k), spacing): k
                for k in frame_indices
            }
            for future in as_completed(future_to_frame):
                k = future_to_frame[future]
                try:
                    axial[k] = future.result()
                except ConfigurationError:
                    raise
                except Exception as e:
                    raise TrackingError(f"NCC tracking failed: {str(e)}", frame_index=k) from e
                progress.update(1)
        progress.close()

        try:
            displacement = DisplacementStack(geometry=geometry, axial=axial)
        except Exception as e:
            raise TrackingError(f"tracked displacement rejected: {str(e)}") from e
        return TrackingResult(displacement=displacement, tracker="ncc", parameters=asdict(self.config))

    def track_sequence(self, stack: FrameStack) -> DisplacementStack:
        return self.track(stack).displacement


def ncc_track_sequence(stack: FrameStack, config: Optional[NccConfig] = None) -> DisplacementStack:
    """Windowed-NCC displacement of every frame relative to frame 0."""
    return NccTracker(config).track_sequence(stack)
