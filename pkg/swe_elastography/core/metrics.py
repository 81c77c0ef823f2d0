"""Quantitative evaluation of elasticity maps: SNR, CNR and MAE over ROIs."""

import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from swe_elastography.config import RoiConfig
from swe_elastography.exceptions import MetricError
from swe_elastography.types import ElasticityMap, PhantomSpec, Roi, RoiRole, RoiStats, ScanGeometry

logger = logging.getLogger(__name__)

RESULT_COLUMNS = [
    "phantom_id",
    "tracker",
    "snr",
    "cnr",
    "mae_background",
    "mae_inclusion",
    "count_background",
    "count_inclusion",
    "valid_fraction",
]

SUMMARY_METRICS = ["snr", "cnr", "mae_background", "mae_inclusion"]


def _effective_mask(emap: ElasticityMap, mask: np.ndarray, exclusion: Optional[np.ndarray]) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != emap.shape:
        raise MetricError(f"ROI mask shape {mask.shape} does not match map shape {emap.shape}")
    effective = mask & emap.valid
    if exclusion is not None:
        effective &= ~np.asarray(exclusion, dtype=bool)
    return effective


def _roi_mask(roi, geometry: Optional[ScanGeometry]) -> np.ndarray:
    if isinstance(roi, Roi):
        if geometry is None:
            raise MetricError("a geometry is required to rasterise a coordinate ROI")
        return roi.mask(geometry)
    return np.asarray(roi, dtype=bool)


def roi_stats(emap: ElasticityMap, roi, exclusion: Optional[np.ndarray] = None) -> RoiStats:
    """Mean and population standard deviation over roi ∩ valid ∩ ¬exclusion.

    Args:
        emap: Elasticity map
        roi: Roi (rasterised on the map's geometry) or boolean mask
        exclusion: Pixels never counted (focal zone)

    Returns:
        RoiStats

    Raises:
        MetricError: If fewer than 2 pixels qualify
    """
    mask = _effective_mask(emap, _roi_mask(roi, emap.geometry), exclusion)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise MetricError("effective ROI is empty (no valid pixel outside the exclusion)")
    if count < 2:
        raise MetricError("effective ROI holds a single pixel; std is undefined")
    values = np.asarray(emap.values)[mask]
    return RoiStats(mean=float(np.mean(values)), std=float(np.std(values)), count=count)


def snr(stats: RoiStats) -> float:
    """mu / sigma.

    Raises:
        MetricError: If sigma is zero
    """
    if stats.std == 0:
        raise MetricError("SNR undefined: zero standard deviation")
    return stats.mean / stats.std


def cnr(background: RoiStats, inclusion: RoiStats) -> float:
    """sqrt(2 (mu_b - mu_i)^2 / (sigma_b^2 + sigma_i^2)).

    Raises:
        MetricError: If both standard deviations are zero
    """
    spread = background.std ** 2 + inclusion.std ** 2
    if spread == 0:
        raise MetricError("CNR undefined: both standard deviations are zero")
    return math.sqrt(2.0 * (background.mean - inclusion.mean) ** 2 / spread)


def mae(
    pred: ElasticityMap,
    truth: ElasticityMap,
    roi,
    exclusion: Optional[np.ndarray] = None,
) -> float:
    """Mean |pred - truth| over pixels valid in both maps, inside the ROI and outside the exclusion.

    Raises:
        MetricError: On a dimension mismatch or an empty effective ROI
    """
    if pred.shape != truth.shape:
        raise MetricError(f"map dimensions differ: {pred.shape} vs {truth.shape}")
    geometry = pred.geometry or truth.geometry
    mask = _effective_mask(pred, _roi_mask(roi, geometry), exclusion) & truth.valid
    if not np.any(mask):
        raise MetricError("effective ROI is empty (no pixel valid in both maps)")
    difference = np.abs(np.asarray(pred.values)[mask] - np.asarray(truth.values)[mask])
    return float(np.mean(difference))


def truth_elasticity_map(spec: PhantomSpec, geometry: ScanGeometry) -> ElasticityMap:
    """Phantom Young's modulus sampled on the scan grid; pixels outside the phantom are invalid."""
    lateral = geometry.lateral_positions()[:, None]
    axial = geometry.axial_positions()[None, :]
    values = spec.youngs_at(axial, lateral)
    inside = (
        (lateral >= 0) & (lateral <= spec.extent_lateral)
        & (axial >= 0) & (axial <= spec.extent_axial)
    )
    inside = np.broadcast_to(inside, geometry.frame_shape)
    return ElasticityMap(values=np.where(inside, values, 0.0), valid=inside.copy(), geometry=geometry)


def depth_band(geometry: ScanGeometry, config: Optional[RoiConfig] = None) -> Roi:
    """Global ROI: +-depth_halfwidth around the push depth, full width."""
    config = config or RoiConfig()
    band = (geometry.push_depth - config.depth_halfwidth, geometry.push_depth + config.depth_halfwidth)
    return Roi(role=RoiRole.GLOBAL, axial_range=band)


def default_rois(spec: PhantomSpec, geometry: ScanGeometry, config: Optional[RoiConfig] = None) -> Dict[RoiRole, Roi]:
    """Evaluation regions for a phantom.

    The global region is a depth band of +-depth_halfwidth around the push
    depth. With an inclusion, the inclusion ROI is the inclusion disk eroded
    by ``inclusion_erosion`` (never below half the radius) and the background
    ROI is the same disk mirrored across the push line.
    """
    config = config or RoiConfig()
    global_roi = depth_band(geometry, config)
    rois = {RoiRole.GLOBAL: global_roi}
    if spec.inclusion is None:
        rois[RoiRole.BACKGROUND] = Roi(role=RoiRole.BACKGROUND, axial_range=global_roi.axial_range)
        return rois
    inc = spec.inclusion
    radius = max(inc.radius - config.inclusion_erosion, 0.5 * inc.radius)
    mirrored = 2.0 * geometry.push_lateral_position - inc.center_lateral
    rois[RoiRole.INCLUSION] = Roi(
        role=RoiRole.INCLUSION, center=(inc.center_axial, inc.center_lateral), radius=radius
    )
    rois[RoiRole.BACKGROUND] = Roi(
        role=RoiRole.BACKGROUND, center=(inc.center_axial, mirrored), radius=radius
    )
    return rois


def band_median(
    emap: ElasticityMap,
    geometry: ScanGeometry,
    exclusion: Optional[np.ndarray] = None,
    config: Optional[RoiConfig] = None,
) -> float:
    """Median over the global depth band, valid pixels only, focal exclusion removed.

    Raises:
        MetricError: If no pixel qualifies
    """
    mask = _effective_mask(emap, depth_band(geometry, config).mask(geometry), exclusion)
    if not np.any(mask):
        raise MetricError("depth band holds no valid pixel outside the exclusion")
    return float(np.median(np.asarray(emap.values)[mask]))


@dataclass
class MetricsRow:
    """One results-table row."""

    phantom_id: str
    tracker: str
    snr: float
    cnr: Optional[float]
    mae_background: float
    mae_inclusion: Optional[float]
    count_background: int
    count_inclusion: Optional[int]
    valid_fraction: float

    def to_dict(self) -> Dict:
        return asdict(self)


class MetricsEvaluator:
    """Computes the results row of a reconstructed map against the phantom truth."""

    def __init__(self, config: Optional[RoiConfig] = None):
        self.config = config or RoiConfig()

    def background_mask(self, spec: PhantomSpec, geometry: ScanGeometry, exclusion: np.ndarray) -> np.ndarray:
        """Background ROI mask, never touching the (un-eroded, padded) inclusion.

        Falls back to the depth band when the mirrored disk has no pixel
        outside the exclusion.
        """
        rois = default_rois(spec, geometry, self.config)
        mask = rois[RoiRole.BACKGROUND].mask(geometry)
        if spec.inclusion is None:
            return mask
        inc = spec.inclusion
        padded = Roi(
            role=RoiRole.INCLUSION,
            center=(inc.center_axial, inc.center_lateral),
            radius=inc.radius + self.config.inclusion_erosion,
        ).mask(geometry)
        mask &= ~padded
        if not np.any(mask & ~exclusion):
            logger.warning("Mirrored background ROI is empty; using the depth band")
            mask = rois[RoiRole.GLOBAL].mask(geometry) & ~padded
        return mask

    def evaluate(
        self,
        pred: ElasticityMap,
        truth: ElasticityMap,
        spec: PhantomSpec,
        geometry: ScanGeometry,
        exclusion: np.ndarray,
        phantom_id: str = "",
        tracker: str = "",
    ) -> MetricsRow:
        """Metrics row for one (phantom, tracker) pair.

        An undefined ratio (zero spread) is reported as infinity.

        Raises:
            MetricError: On mismatched maps or an empty ROI
        """
        if pred.shape != truth.shape or pred.shape != geometry.frame_shape:
            raise MetricError(
                f"map dimensions differ: pred {pred.shape}, truth {truth.shape}, geometry {geometry.frame_shape}"
            )
        background = self.background_mask(spec, geometry, exclusion)
        bg_stats = roi_stats(pred, background, exclusion)
        snr_value = self._ratio(lambda: snr(bg_stats), "SNR")
        mae_background = mae(pred, truth, background, exclusion)

        cnr_value = mae_inclusion = count_inclusion = None
        if spec.inclusion is not None:
            inclusion = default_rois(spec, geometry, self.config)[RoiRole.INCLUSION].mask(geometry)
            inc_stats = roi_stats(pred, inclusion, exclusion)
            cnr_value = self._ratio(lambda: cnr(bg_stats, inc_stats), "CNR")
            mae_inclusion = mae(pred, truth, inclusion, exclusion)
            count_inclusion = inc_stats.count

        row = MetricsRow(
            phantom_id=phantom_id,
            tracker=tracker,
            snr=snr_value,
            cnr=cnr_value,
            mae_background=mae_background,
            mae_inclusion=mae_inclusion,
            count_background=bg_stats.count,
            count_inclusion=count_inclusion,
            valid_fraction=pred.valid_fraction(exclusion),
        )
        logger.info(f"Metrics {phantom_id}/{tracker}: SNR={row.snr:.3f} CNR={row.cnr} MAE_b={row.mae_background:.1f} Pa")
        return row

    @staticmethod
    def _ratio(compute, name: str) -> float:
        try:
            return compute()
        except MetricError as e:
            logger.warning(f"{name} reported as inf: {e}")
            return math.inf


def results_frame(rows: List[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_dict() for row in rows], columns=RESULT_COLUMNS)


def append_results(rows: List[MetricsRow], path: str, overwrite: bool = False) -> None:
    """Append rows to a results CSV, writing the header only when the file is new.

    With ``overwrite`` the table is replaced instead.
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    exists = not overwrite and os.path.exists(path) and os.path.getsize(path) > 0
    results_frame(rows).to_csv(
        path, mode="a" if exists else "w", header=not exists, index=False,
        float_format="%.10g", na_rep="", lineterminator="\n",
    )


def read_results(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Results file not found: {path}")
    return pd.read_csv(path, dtype={"phantom_id": str, "tracker": str})


def summarize_results(table: pd.DataFrame) -> pd.DataFrame:
    """Per-tracker mean and sample std of the metric columns, one row per tracker.

    Columns are flattened to ``<metric>_mean`` and ``<metric>_std``; metrics
    never reported (CNR on homogeneous phantoms) come out empty.
    """
    if table.empty:
        raise MetricError("cannot summarise an empty results table")
    numeric = table[["tracker", *SUMMARY_METRICS]].copy()
    numeric[SUMMARY_METRICS] = numeric[SUMMARY_METRICS].apply(pd.to_numeric, errors="coerce")
    summary = numeric.groupby("tracker", sort=True)[SUMMARY_METRICS].agg(["mean", "std"])
    summary.columns = [f"{metric}_{stat}" for metric, stat in summary.columns]
    counts = numeric.groupby("tracker", sort=True).size().rename("n_phantoms")
    return pd.concat([counts, summary], axis=1).reset_index()


def write_summary(table: pd.DataFrame, path: str) -> pd.DataFrame:
    """Write the per-tracker summary of a results table next to it."""
    summary = summarize_results(table)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    summary.to_csv(path, index=False, float_format="%.10g", na_rep="", lineterminator="\n")
    logger.info(f"Wrote summary of {len(table)} result row(s) for {len(summary)} tracker(s) to {path}")
    return summary
