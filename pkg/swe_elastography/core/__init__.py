"""Core components of the shear-wave elastography toolkit."""

from .stack_io import read_stack, read_stack_header, write_stack
from .phantom import generate_phantom_specs, load_phantom_spec, parse_phantom_spec, write_phantom_spec
from .exporters import export_elasticity_map, export_mask_csv, read_map_csv
from .manifest import RunManifest
from .elastic_sim import ShearWaveSimulator
from .rf_sim import RfSimulator
from .peak import subsample_peak
from .ncc_tracker import NccTracker, ncc_profile, ncc_track_sequence
from .warping import warp_image
from .similarity import curvature_penalty, lncc_similarity
from .variational_tracker import VariationalTracker, variational_track_sequence, write_loss_trace
from .sws_reconstructor import (
    Reconstruction,
    SwsReconstructor,
    estimate_time_lag,
    focal_exclusion_mask,
    lateral_xcorr,
    median_filter,
    young_from_sws,
)
from .metrics import (
    MetricsEvaluator,
    MetricsRow,
    append_results,
    band_median,
    cnr,
    default_rois,
    depth_band,
    mae,
    results_frame,
    roi_stats,
    snr,
    summarize_results,
    truth_elasticity_map,
    write_summary,
)

__all__ = [
    "read_stack",
    "read_stack_header",
    "write_stack",
    "generate_phantom_specs",
    "load_phantom_spec",
    "parse_phantom_spec",
    "write_phantom_spec",
    "export_elasticity_map",
    "export_mask_csv",
    "read_map_csv",
    "RunManifest",
    "ShearWaveSimulator",
    "RfSimulator",
    "subsample_peak",
    "NccTracker",
    "ncc_profile",
    "ncc_track_sequence",
    "warp_image",
    "curvature_penalty",
    "lncc_similarity",
    "VariationalTracker",
    "variational_track_sequence",
    "write_loss_trace",
    "Reconstruction",
    "SwsReconstructor",
    "estimate_time_lag",
    "focal_exclusion_mask",
    "lateral_xcorr",
    "median_filter",
    "young_from_sws",
    "MetricsEvaluator",
    "MetricsRow",
    "append_results",
    "band_median",
    "cnr",
    "default_rois",
    "depth_band",
    "mae",
    "results_frame",
    "roi_stats",
    "snr",
    "summarize_results",
    "truth_elasticity_map",
    "write_summary",
]
