"""RF speckle rendering from displaced point scatterers.

Each scatterer contributes a separable point-spread function: a Gaussian
beam profile across lines times a Gaussian-windowed cosine pulse along
fast time, centred on the two-way travel time of the displaced scatterer.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates
from tqdm import tqdm

from swe_elastography.config import PulseSpec, SimulationConfig
from swe_elastography.exceptions import SimulationError, SweElastographyError
from swe_elastography.types import (
    DisplacementStack,
    FrameStack,
    PhantomSpec,
    ScanGeometry,
    ScattererCloud,
)

logger = logging.getLogger(__name__)

# PSF truncation in standard deviations.
LATERAL_TRUNCATION = 3.0
TEMPORAL_TRUNCATION = 4.0


class RfSimulator:
    """Renders RF frame sequences for a phantom and a displacement movie."""

    DEFAULT_CHUNK_SIZE = 2048

    def __init__(
        self,
        pulse: Optional[PulseSpec] = None,
        config: Optional[SimulationConfig] = None,
        show_progress: bool = False,
    ):
        """Initialize RfSimulator.

        Args:
            pulse: Transmit pulse and beam width
            config: Simulation settings (scatterer density, noise, seed)
            show_progress: Show a tqdm bar over frames
        """
        self.pulse = pulse or PulseSpec()
        self.config = config or SimulationConfig()
        self.show_progress = show_progress
        self.chunk_size = self.DEFAULT_CHUNK_SIZE

    def seed_scatterers(
        self,
        spec: PhantomSpec,
        density_2d: Optional[float] = None,
        seed: Optional[int] = None,
    ) -> ScattererCloud:
        """Draw uniformly placed scatterers with standard-normal amplitudes.

        Args:
            spec: Phantom (sets the extent)
            density_2d: Scatterers per m^2
            seed: Generator seed

        Returns:
            ScattererCloud with round(density * area) scatterers

        Raises:
            SimulationError: If the density or the phantom area is not positive
        """
        density = self.config.scatterer_density if density_2d is None else density_2d
        seed = self.config.seed if seed is None else seed
        area = spec.extent_axial * spec.extent_lateral
        if not density > 0:
            raise SimulationError(f"scatterer density must be > 0, got {density}")
        if not area > 0:
            raise SimulationError("phantom has zero area")
        count = int(round(density * area))
        rng = np.random.default_rng(seed)
        axial = rng.uniform(0.0, spec.extent_axial, count)
        lateral = rng.uniform(0.0, spec.extent_lateral, count)
        amplitudes = rng.standard_normal(count)
        logger.debug(f"Seeded {count} scatterers (seed {seed})")
        return ScattererCloud(axial=axial, lateral=lateral, amplitudes=amplitudes, seed=seed)

    @staticmethod
    def sample_displacement(
        frame: np.ndarray,
        axial: np.ndarray,
        lateral: np.ndarray,
        geometry: ScanGeometry,
    ) -> np.ndarray:
        """Bilinear interpolation of an axial displacement frame at scatterer positions.

        Positions outside the scan grid take the value of the nearest edge node.
        """
        lateral_index = (np.asarray(lateral, float) - geometry.lateral_positions()[0]) / geometry.lateral_pitch
        axial_index = np.asarray(axial, float) / geometry.axial_spacing
        lateral_index = np.clip(lateral_index, 0, geometry.n_lateral - 1)
        axial_index = np.clip(axial_index, 0, geometry.n_axial - 1)
        return map_coordinates(
            np.asarray(frame, float), [lateral_index, axial_index], order=1, mode="nearest"
        )

    def render_rf_frame(
        self,
        cloud: ScattererCloud,
        displacement: np.ndarray,
        geometry: ScanGeometry,
    ) -> np.ndarray:
        """Render one RF frame ([lateral][axial]).

        Args:
            cloud: Scatterers
            displacement: Axial displacement per scatterer (m)
            geometry: Scan geometry

        Returns:
            RF frame

        Raises:
            SimulationError: If the displacement list does not match the cloud
        """
        displacement = np.asarray(displacement, float)
        if displacement.shape != (cloud.count,):
            raise SimulationError(
                f"displacement length {displacement.size} does not match scatterer count {cloud.count}"
            )
        frame = np.zeros(geometry.n_lateral * geometry.n_axial)
        for start in range(0, cloud.count, self.chunk_size):
            stop = start + self.chunk_size
            frame += self._render_chunk(
                cloud.axial[start:stop] + displacement[start:stop],
                cloud.lateral[start:stop],
                cloud.amplitudes[start:stop],
                geometry,
            )
        return frame.reshape(geometry.frame_shape)

    def _render_chunk(
        self,
        depth: np.ndarray,
        lateral: np.ndarray,
        amplitudes: np.ndarray,
        geometry: ScanGeometry,
    ) -> np.ndarray:
        pulse = self.pulse
        sigma_t = pulse.sigma_t
        fs = geometry.sampling_freq

        lateral_half = self._half_support(LATERAL_TRUNCATION * pulse.lateral_sigma / geometry.lateral_pitch)
        line_offsets = np.arange(-lateral_half, lateral_half + 2)
        line_position = (lateral - geometry.lateral_positions()[0]) / geometry.lateral_pitch
        lines = np.floor(line_position).astype(int)[:, None] + line_offsets[None, :]
        line_distance = (line_position[:, None] - lines) * geometry.lateral_pitch
        beam = np.exp(-line_distance ** 2 / (2.0 * pulse.lateral_sigma ** 2))
        beam_ok = (
            (lines >= 0) & (lines < geometry.n_lateral)
            & (np.abs(line_distance) <= LATERAL_TRUNCATION * pulse.lateral_sigma)
        )

        half = self._half_support(TEMPORAL_TRUNCATION * sigma_t * fs)
        sample_offsets = np.arange(-half, half + 2)
        tau0 = 2.0 * depth / geometry.sound_speed
        samples = np.floor(tau0 * fs).astype(int)[:, None] + sample_offsets[None, :]
        lag = samples / fs - tau0[:, None]
        echo = np.exp(-lag ** 2 / (2.0 * sigma_t ** 2)) * np.cos(2.0 * math.pi * pulse.center_freq * lag)
        echo_ok = (
            (samples >= 0) & (samples < geometry.n_axial)
            & (np.abs(lag) <= TEMPORAL_TRUNCATION * sigma_t)
        )

        weights = (
            (amplitudes[:, None] * beam * beam_ok)[:, :, None]
            * (echo * echo_ok)[:, None, :]
        )
        mask = beam_ok[:, :, None] & echo_ok[:, None, :]
        flat = lines[:, :, None] * geometry.n_axial + samples[:, None, :]
        return np.bincount(
            flat[mask], weights=weights[mask], minlength=geometry.n_lateral * geometry.n_axial
        )

    @staticmethod
    def _half_support(extent_in_samples: float) -> int:
        return int(math.ceil(extent_in_samples)) + 1

    def simulate_rf_sequence(
        self,
        spec: PhantomSpec,
        truth: DisplacementStack,
        geometry: Optional[ScanGeometry] = None,
        seed: Optional[int] = None,
    ) -> FrameStack:
        """Render the RF sequence of a displacement movie.

        Frame k is rendered from the scatterer cloud displaced by truth frame k;
        frame 0 is the undisplaced reference. With ``noise_snr_db`` set, seeded
        white Gaussian noise is added to every frame.

        Args:
            spec: Phantom
            truth: Ground-truth displacement movie
            geometry: Scan geometry (the truth geometry when omitted)
            seed: Scatterer and noise seed

        Returns:
            FrameStack

        Raises:
            SimulationError: If the truth dims disagree with the geometry or rendering fails
        """
        geometry = geometry or truth.geometry
        seed = self.config.seed if seed is None else seed
        if truth.axial.shape != geometry.shape:
            raise SimulationError(
                f"truth dims {truth.axial.shape} do not match geometry {geometry.shape}"
            )
        try:
            cloud = self.seed_scatterers(spec, seed=seed)
            frames = np.empty(geometry.shape)
            reference = self.render_rf_frame(cloud, np.zeros(cloud.count), geometry)
            frame_indices = range(geometry.n_frames)
            if self.show_progress:
                frame_indices = tqdm(frame_indices, desc="rf", unit="frame")
            for k in frame_indices:
                if not np.any(truth.axial[k]):
                    frames[k] = reference
                    continue
                shift = self.sample_displacement(truth.axial[k], cloud.axial, cloud.lateral, geometry)
                frames[k] = self.render_rf_frame(cloud, shift, geometry)
            if self.config.noise_snr_db is not None:
                frames += self._noise(reference, geometry.shape, seed)
            logger.info(f"Rendered {geometry.n_frames} RF frames from {cloud.count} scatterers")
            return FrameStack(geometry=geometry, data=frames)
        except SimulationError:
            raise
        except SweElastographyError as e:
            raise SimulationError(f"RF simulation failed: {str(e)}") from e

    def _noise(self, reference: np.ndarray, shape: Tuple[int, int, int], seed: int) -> np.ndarray:
        rms = float(np.sqrt(np.mean(reference ** 2)))
        sigma = rms * 10.0 ** (-self.config.noise_snr_db / 20.0)
        rng = np.random.default_rng([seed, 1])
        return sigma * rng.standard_normal(shape)
