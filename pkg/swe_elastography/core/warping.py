"""Bilinear image warping by a dense displacement field."""

from typing import Optional, Tuple

import numpy as np

from swe_elastography.types import Ddf, ScanGeometry


def bilinear_sample(
    image: np.ndarray,
    lateral_index: np.ndarray,
    axial_index: np.ndarray,
    with_gradient: bool = False,
) -> Tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Sample ``image`` ([lateral][axial]) at fractional indices with edge clamping.

    Args:
        image: 2D array with at least 2 samples along each axis
        lateral_index: Fractional lateral indices
        axial_index: Fractional axial indices (same shape)
        with_gradient: Also return the derivatives with respect to each index

    Returns:
        (values, d/d axial_index, d/d lateral_index); the derivatives are None
        unless requested and zero where the index was clamped
    """
    image = np.asarray(image, dtype=float)
    n_lateral, n_axial = image.shape
    p = np.clip(lateral_index, 0.0, n_lateral - 1)
    q = np.clip(axial_index, 0.0, n_axial - 1)
    p0 = np.minimum(np.floor(p).astype(int), max(n_lateral - 2, 0))
    q0 = np.minimum(np.floor(q).astype(int), max(n_axial - 2, 0))
    p1 = np.minimum(p0 + 1, n_lateral - 1)
    q1 = np.minimum(q0 + 1, n_axial - 1)
    tp = p - p0
    tq = q - q0

    v00 = image[p0, q0]
    v01 = image[p0, q1]
    v10 = image[p1, q0]
    v11 = image[p1, q1]
    near = (1.0 - tq) * v00 + tq * v01
    far = (1.0 - tq) * v10 + tq * v11
    values = (1.0 - tp) * near + tp * far
    if not with_gradient:
        return values, None, None

    inside_axial = (axial_index >= 0.0) & (axial_index <= n_axial - 1)
    inside_lateral = (lateral_index >= 0.0) & (lateral_index <= n_lateral - 1)
    d_axial = ((1.0 - tp) * (v01 - v00) + tp * (v11 - v10)) * inside_axial
    d_lateral = (far - near) * inside_lateral
    return values, d_axial, d_lateral


def sample_grid(shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    lateral, axial = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return lateral.astype(float), axial.astype(float)


def warp_samples(
    moving: np.ndarray,
    axial_shift: np.ndarray,
    lateral_shift: Optional[np.ndarray] = None,
    with_gradient: bool = False,
):
    """Warp by a displacement given in samples: out(x, z) = moving(x + du_lat, z + du_ax)."""
    lateral, axial = sample_grid(moving.shape)
    if lateral_shift is not None:
        lateral = lateral + lateral_shift
    return bilinear_sample(moving, lateral, axial + axial_shift, with_gradient)


def warp_image(moving: np.ndarray, ddf: Ddf, geometry: ScanGeometry) -> np.ndarray:
    """Resample ``moving`` into the fixed frame.

    The output at (x, z) is ``moving`` at (x + u_lat, z + u_ax) with bilinear
    interpolation and edge clamping; positive axial displacement is deeper.

    Raises:
        ValueError: If the field and the frame differ in shape
    """
    moving = np.asarray(moving, dtype=float)
    if ddf.axial.shape != moving.shape or ddf.lateral.shape != moving.shape:
        raise ValueError(f"ddf shape {ddf.axial.shape} does not match frame shape {moving.shape}")
    values, _, _ = warp_samples(
        moving,
        ddf.axial / geometry.axial_spacing,
        ddf.lateral / geometry.lateral_pitch,
    )
    return values
