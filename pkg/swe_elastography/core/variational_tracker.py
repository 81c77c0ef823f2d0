"""Variational speckle tracking.

Each post-push frame is registered to the reference by minimising

    loss(u) = -mean LNCC(fixed, moving o u) + alpha * sum |second differences of u|

over a dense axial displacement field u (metres). The L1 term is smoothed
with a Charbonnier function inside the optimiser; the recorded losses use
the exact L1 value. Optimisation runs coarse to fine over a Gaussian
pyramid with Armijo backtracking, and frame t starts from frame t-1.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.signal import hilbert
from tqdm import tqdm

from swe_elastography.config import VariationalConfig
from swe_elastography.core.similarity import (
    curvature_penalty,
    lncc_gradient,
    lncc_similarity,
    smooth_curvature_penalty,
)
from swe_elastography.core.warping import warp_samples
from swe_elastography.exceptions import DataValidationError, TrackingError
from swe_elastography.types import DisplacementStack, FrameStack, LossRecord, TrackingResult

logger = logging.getLogger(__name__)

LOSS_TRACE_COLUMNS = ["frame", "level", "iter", "similarity", "penalty", "total"]


@dataclass
class Evaluation:
    """Objective terms at one displacement estimate (sample units)."""

    smooth_total: float
    similarity: float
    penalty: float
    gradient_axial: Optional[np.ndarray] = None
    gradient_lateral: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return self.similarity + self.penalty


class VariationalObjective:
    """Loss for one image pair at one pyramid level.

    Displacements are held in samples of this level; ``axial_spacing`` and
    ``lateral_spacing`` convert them to metres for the regulariser.
    """

    def __init__(
        self,
        fixed: np.ndarray,
        moving: np.ndarray,
        axial_spacing: float,
        lateral_spacing: float,
        config: VariationalConfig,
    ):
        self.fixed = np.asarray(fixed, dtype=float)
        self.moving = np.asarray(moving, dtype=float)
        self.axial_spacing = axial_spacing
        self.lateral_spacing = lateral_spacing
        self.config = config

    def _penalty_exact(self, axial: np.ndarray, lateral: Optional[np.ndarray]) -> float:
        cfg = self.config
        value = curvature_penalty(axial * self.axial_spacing, lateral=cfg.lateral_curvature)
        if lateral is not None:
            value += curvature_penalty(lateral * self.lateral_spacing, lateral=cfg.lateral_curvature)
        return cfg.alpha * value

    def evaluate(
        self,
        axial: np.ndarray,
        lateral: Optional[np.ndarray] = None,
        with_gradient: bool = False,
    ) -> Evaluation:
        """Objective (and gradient with respect to the sample-unit fields)."""
        cfg = self.config
        warped, d_axial, d_lateral = warp_samples(self.moving, axial, lateral, with_gradient)
        if with_gradient:
            similarity, d_similarity = lncc_gradient(self.fixed, warped, cfg.lncc_window, cfg.variance_floor)
        else:
            similarity = lncc_similarity(self.fixed, warped, cfg.lncc_window, cfg.variance_floor)
        smooth_value, smooth_grad = smooth_curvature_penalty(
            axial * self.axial_spacing, cfg.charbonnier_eps, cfg.lateral_curvature
        )
        smooth_penalty = cfg.alpha * smooth_value
        gradient_axial = gradient_lateral = None
        if with_gradient:
            gradient_axial = d_similarity * d_axial + cfg.alpha * smooth_grad * self.axial_spacing
        if lateral is not None:
            lateral_value, lateral_grad = smooth_curvature_penalty(
                lateral * self.lateral_spacing, cfg.charbonnier_eps, cfg.lateral_curvature
            )
            smooth_penalty += cfg.alpha * lateral_value
            if with_gradient:
                gradient_lateral = d_similarity * d_lateral + cfg.alpha * lateral_grad * self.lateral_spacing
        return Evaluation(
            smooth_total=similarity + smooth_penalty,
            similarity=similarity,
            penalty=self._penalty_exact(axial, lateral),
            gradient_axial=gradient_axial,
            gradient_lateral=gradient_lateral,
        )

    def loss_in_metres(self, axial_metres: np.ndarray) -> Tuple[float, np.ndarray]:
        """Smoothed objective and its gradient for an axial field given in metres."""
        evaluation = self.evaluate(axial_metres / self.axial_spacing, with_gradient=True)
        return evaluation.smooth_total, evaluation.gradient_axial / self.axial_spacing


def envelope(image: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal along depth."""
    return np.abs(hilbert(np.asarray(image, dtype=float), axis=1))


def downsample(image: np.ndarray) -> np.ndarray:
    """Gaussian-smoothed decimation by 2 along both axes."""
    return gaussian_filter(np.asarray(image, dtype=float), sigma=1.0)[::2, ::2]


def upsample_field(field: np.ndarray, shape: Tuple[int, int], scale: float = 2.0) -> np.ndarray:
    """Bilinear upsampling of a coarse field to ``shape``; values are multiplied by ``scale``."""
    lateral, axial = np.meshgrid(
        np.arange(shape[0]) / 2.0, np.arange(shape[1]) / 2.0, indexing="ij"
    )
    return scale * map_coordinates(field, [lateral, axial], order=1, mode="nearest")


class VariationalTracker:
    """Tracks axial displacement by direct minimisation of the LNCC + curvature loss."""

    DEFAULT_ZERO_GRADIENT = 1e-30

    def __init__(self, config: Optional[VariationalConfig] = None, show_progress: bool = False):
        """Initialize VariationalTracker.

        Args:
            config: Objective weights, window, pyramid and line-search settings
            show_progress: Show a tqdm bar over frames
        """
        self.config = config or VariationalConfig()
        self.show_progress = show_progress

    def pyramid_levels(self, shape: Tuple[int, int]) -> int:
        """Number of usable levels: every level must fit the LNCC window."""
        axial_window, lateral_window = self.config.lncc_window
        levels = 0
        n_lateral, n_axial = shape
        while levels < self.config.pyramid_levels and n_lateral >= lateral_window and n_axial >= axial_window:
            levels += 1
            n_lateral, n_axial = (n_lateral + 1) // 2, (n_axial + 1) // 2
        if levels == 0:
            raise TrackingError(f"LNCC window {self.config.lncc_window} does not fit frames of shape {shape}")
        if levels < self.config.pyramid_levels:
            logger.warning(f"Using {levels} of {self.config.pyramid_levels} pyramid levels for frame shape {shape}")
        return levels

    def build_pyramid(self, image: np.ndarray, levels: int) -> List[np.ndarray]:
        """Finest level first; coarser levels use the envelope when configured."""
        pyramid = [np.asarray(image, dtype=float)]
        current = envelope(image) if self.config.envelope_pyramid else pyramid[0]
        for _ in range(1, levels):
            current = downsample(current)
            pyramid.append(current)
        return pyramid

    def register(
        self,
        fixed: np.ndarray,
        moving: np.ndarray,
        axial_spacing: float,
        lateral_spacing: float,
        initial_axial: Optional[np.ndarray] = None,
        initial_lateral: Optional[np.ndarray] = None,
        frame_index: int = 0,
    ) -> Tuple[np.ndarray, Optional[np.ndarray], List[LossRecord], bool]:
        """Register one frame pair coarse to fine.

        Args:
            fixed: Reference frame
            moving: Moving frame
            axial_spacing: Axial sample spacing (m)
            lateral_spacing: Lateral pitch (m)
            initial_axial: Starting axial field in samples (zeros when omitted)
            initial_lateral: Starting lateral field in lines
            frame_index: Frame number for records and errors

        Returns:
            (axial samples, lateral lines or None, loss records, step underflow flag)

        Raises:
            TrackingError: If the loss becomes non-finite
        """
        cfg = self.config
        levels = self.pyramid_levels(fixed.shape)
        fixed_pyramid = self.build_pyramid(fixed, levels)
        moving_pyramid = self.build_pyramid(moving, levels)

        coarsest = levels - 1
        scale = 2 ** coarsest
        shape = fixed_pyramid[coarsest].shape
        if initial_axial is not None:
            axial = np.asarray(initial_axial, float)[::scale, ::scale] / scale
        else:
            axial = np.zeros(shape)
        lateral = None
        if cfg.estimate_lateral:
            lateral = (
                np.asarray(initial_lateral, float)[::scale, ::scale] / scale
                if initial_lateral is not None else np.zeros(shape)
            )

        records: List[LossRecord] = []
        underflow = False
        for level in range(coarsest, -1, -1):
            if level != coarsest:
                target = fixed_pyramid[level].shape
                axial = upsample_field(axial, target)
                if lateral is not None:
                    lateral = upsample_field(lateral, target)
            objective = VariationalObjective(
                fixed_pyramid[level],
                moving_pyramid[level],
                axial_spacing * 2 ** level,
                lateral_spacing * 2 ** level,
                cfg,
            )
            axial, lateral, level_records, level_underflow = self._descend(
                objective, axial, lateral, frame_index, level
            )
            records.extend(level_records)
            underflow = underflow or level_underflow
        return axial, lateral, records, underflow

    def _direction(self, gradient: np.ndarray) -> np.ndarray:
        sigma = self.config.gradient_sigma
        return -gaussian_filter(gradient, sigma) if sigma > 0 else -gradient

    def _descend(
        self,
        objective: VariationalObjective,
        axial: np.ndarray,
        lateral: Optional[np.ndarray],
        frame_index: int,
        level: int,
    ) -> Tuple[np.ndarray, Optional[np.ndarray], List[LossRecord], bool]:
        """Gradient descent with Armijo backtracking at one pyramid level.

        A step is accepted when the smoothed loss satisfies the Armijo
        condition and the exact loss does not increase. Each line search
        starts from twice the last accepted step, capped at ``step_size``.
        """
        cfg = self.config
        current = objective.evaluate(axial, lateral, with_gradient=True)
        self._check_finite(current, frame_index, level)
        records = [self._record(frame_index, level, 0, current)]
        underflow = False
        first_step = cfg.step_size

        for iteration in range(1, cfg.iters_per_level + 1):
            gradients = [current.gradient_axial]
            if lateral is not None:
                gradients.append(current.gradient_lateral)
            if max(float(np.max(np.abs(g))) for g in gradients) <= self.DEFAULT_ZERO_GRADIENT:
                break

            directions = [self._direction(g) for g in gradients]
            slope = sum(float(np.sum(g * d)) for g, d in zip(gradients, directions))
            if not slope < 0:
                directions = [-g for g in gradients]
                slope = -sum(float(np.sum(g * g)) for g in gradients)
            # Largest trial move is step_size samples.
            norm = max(float(np.max(np.abs(d))) for d in directions)
            directions = [d / norm for d in directions]
            slope /= norm

            step = first_step
            accepted = None
            while step >= cfg.min_step:
                trial_axial = axial + step * directions[0]
                trial_lateral = lateral + step * directions[1] if lateral is not None else None
                trial = objective.evaluate(trial_axial, trial_lateral, with_gradient=False)
                self._check_finite(trial, frame_index, level)
                if (
                    trial.smooth_total <= current.smooth_total + cfg.armijo_c1 * step * slope
                    and trial.total <= current.total
                ):
                    accepted = (trial_axial, trial_lateral)
                    break
                step *= 0.5

            if accepted is None:
                underflow = True
                logger.debug(f"frame {frame_index} level {level}: step size underflow at iteration {iteration}")
                break

            previous_total = current.total
            axial, lateral = accepted
            first_step = min(cfg.step_size, 2.0 * step)
            current = objective.evaluate(axial, lateral, with_gradient=True)
            self._check_finite(current, frame_index, level)
            records.append(self._record(frame_index, level, iteration, current))
            if previous_total - current.total < cfg.tolerance:
                break

        return axial, lateral, records, underflow

    @staticmethod
    def _record(frame_index: int, level: int, iteration: int, evaluation: Evaluation) -> LossRecord:
        return LossRecord(
            frame=frame_index,
            level=level,
            iteration=iteration,
            similarity=evaluation.similarity,
            penalty=evaluation.penalty,
            total=evaluation.total,
        )

    @staticmethod
    def _check_finite(evaluation: Evaluation, frame_index: int, level: int) -> None:
        if not (math.isfinite(evaluation.smooth_total) and math.isfinite(evaluation.total)):
            raise TrackingError(f"non-finite loss at pyramid level {level}", frame_index=frame_index)

    def track(self, stack: FrameStack) -> TrackingResult:
        """Track every frame against frame 0.

        Returns:
            TrackingResult with the displacement stack, the loss trace and the
            frames whose line search underflowed

        Raises:
            TrackingError: On non-finite loss (naming the frame) or implausible output
        """
        cfg = self.config
        geometry = stack.geometry
        if stack.n_frames < 2:
            raise TrackingError("need at least 2 frames to track")
        logger.info(
            f"Variational tracking {stack.n_frames - 1} frames "
            f"(alpha={cfg.alpha}, window={cfg.lncc_window}, levels={cfg.pyramid_levels})"
        )

        axial = np.zeros(geometry.shape)
        lateral = np.zeros(geometry.shape) if cfg.estimate_lateral else None
        trace: List[LossRecord] = []
        underflow_frames: List[int] = []
        previous_axial = previous_lateral = None

        frame_indices = range(1, stack.n_frames)
        if self.show_progress:
            frame_indices = tqdm(frame_indices, desc="variational", unit="frame")
        for k in frame_indices:
            try:
                u_axial, u_lateral, records, underflow = self.register(
                    stack.reference,
                    stack.frame(k),
                    geometry.axial_spacing,
                    geometry.lateral_pitch,
                    previous_axial if cfg.warm_start else None,
                    previous_lateral if cfg.warm_start else None,
                    frame_index=k,
                )
            except TrackingError:
                raise
            except Exception as e:
                raise TrackingError(f"variational tracking failed: {str(e)}", frame_index=k) from e
            trace.extend(records)
            if underflow:
                underflow_frames.append(k)
            axial[k] = u_axial * geometry.axial_spacing
            if lateral is not None:
                lateral[k] = u_lateral * geometry.lateral_pitch
            previous_axial, previous_lateral = u_axial, u_lateral
            logger.debug(f"frame {k}: final loss {records[-1].total:.6f} after {len(records)} records")

        if underflow_frames:
            logger.warning(f"Step size underflow in {len(underflow_frames)} frame(s); best iterates kept")
        try:
            displacement = DisplacementStack(geometry=geometry, axial=axial, lateral=lateral)
        except DataValidationError as e:
            raise TrackingError(f"tracked displacement rejected: {str(e)}") from e
        return TrackingResult(
            displacement=displacement,
            tracker="variational",
            loss_trace=trace,
            underflow_frames=underflow_frames,
            parameters=asdict(cfg),
        )

    def track_sequence(self, stack: FrameStack) -> DisplacementStack:
        return self.track(stack).displacement


def variational_track_sequence(stack: FrameStack, config: Optional[VariationalConfig] = None) -> DisplacementStack:
    """Variational displacement of every frame relative to frame 0."""
    return VariationalTracker(config).track_sequence(stack)


def loss_trace_frame(records: List[LossRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [[r.frame, r.level, r.iteration, r.similarity, r.penalty, r.total] for r in records],
        columns=LOSS_TRACE_COLUMNS,
    )


def write_loss_trace(records: List[LossRecord], path: str) -> None:
    """Write loss records as CSV (frame, level, iter, similarity, penalty, total)."""
    loss_trace_frame(records).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
