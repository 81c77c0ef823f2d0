"""Elasticity map export (CSV and 16-bit PGM) and CSV read-back."""

import logging
import os
from typing import Optional

import numpy as np
import pandas as pd

from swe_elastography.exceptions import ExportError
from swe_elastography.types import ElasticityMap, ScanGeometry

logger = logging.getLogger(__name__)

PGM_MAX_VALUE = 65535
# Linear display range of the PGM export (Pa).
PGM_RANGE = (0.0, 100e3)
CSV_FLOAT_FORMAT = "%.10g"


def _ensure_parent(path: str) -> None:
    if not path:
        raise ExportError("empty output path")
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def export_elasticity_map(emap: ElasticityMap, path: str, fmt: str = "csv") -> None:
    """Export an elasticity map.

    CSV holds one row per lateral line with ``nan`` in invalid cells. PGM is a
    16-bit binary grayscale image, one image row per axial sample, scaled
    linearly over [0, 100 kPa] and clamped.

    Args:
        emap: Map to export
        path: Output file
        fmt: ``"csv"`` or ``"pgm"``

    Raises:
        ExportError: If the map has no valid pixel, the format is unknown or I/O fails
    """
    if not np.any(emap.valid):
        raise ExportError("elasticity map has no valid pixel; nothing to export")
    if fmt not in ("csv", "pgm"):
        raise ExportError(f"unknown export format {fmt!r}")
    _ensure_parent(path)
    try:
        if fmt == "csv":
            values = np.where(emap.valid, emap.values, np.nan)
            pd.DataFrame(values).to_csv(
                path, header=False, index=False, float_format=CSV_FLOAT_FORMAT,
                na_rep="nan", lineterminator="\n",
            )
        else:
            _write_pgm(emap, path)
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}") from e
    logger.debug(f"Exported {emap.shape} map to {path} ({fmt})")


def pgm_pixels(emap: ElasticityMap) -> np.ndarray:
    """PGM pixel values as written by ``export_elasticity_map`` ([axial][lateral])."""
    low, high = PGM_RANGE
    scaled = np.clip((np.asarray(emap.values) - low) / (high - low), 0.0, 1.0)
    pixels = np.rint(scaled * PGM_MAX_VALUE).astype(np.uint16)
    pixels[~emap.valid] = 0
    # Image rows run along depth.
    return pixels.T


def _write_pgm(emap: ElasticityMap, path: str) -> None:
    image = np.ascontiguousarray(pgm_pixels(emap), dtype=">u2")
    height, width = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{PGM_MAX_VALUE}\n".encode("ascii"))
        f.write(image.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a 16-bit binary PGM into a [row][column] uint16 array."""
    with open(path, "rb") as f:
        raw = f.read()
    magic, dims, maxval, payload = raw.split(b"\n", 3)
    if magic != b"P5" or int(maxval) != PGM_MAX_VALUE:
        raise ExportError(f"{path}: not a 16-bit binary PGM")
    width, height = (int(v) for v in dims.split())
    return np.frombuffer(payload, dtype=">u2").reshape(height, width).astype(np.uint16)


def export_mask_csv(mask: np.ndarray, path: str) -> None:
    """Write a boolean mask as a 0/1 CSV, one row per lateral line."""
    _ensure_parent(path)
    try:
        pd.DataFrame(np.asarray(mask, dtype=np.uint8)).to_csv(
            path, header=False, index=False, lineterminator="\n",
        )
    except OSError as e:
        raise ExportError(f"cannot write {path}: {e}") from e


def read_map_csv(path: str, geometry: Optional[ScanGeometry] = None) -> ElasticityMap:
    """Read a CSV written by ``export_elasticity_map``; ``nan`` cells become invalid.

    Raises:
        FileNotFoundError: If the file does not exist
        ExportError: If the file is not a numeric table or disagrees with ``geometry``
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Map file not found: {path}")
    try:
        table = pd.read_csv(path, header=None, dtype=float)
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ExportError(f"{path}: not a numeric map table: {e}") from e
    values = table.to_numpy(dtype=float)
    if geometry is not None and values.shape != geometry.frame_shape:
        raise ExportError(
            f"{path}: map shape {values.shape} does not match geometry {geometry.frame_shape}"
        )
    valid = np.isfinite(values)
    return ElasticityMap(values=np.where(valid, values, 0.0), valid=valid, geometry=geometry)
