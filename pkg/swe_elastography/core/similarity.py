"""Local normalised cross-correlation and second-difference regularisation.

Local statistics come from box filters: the window means of f, w, f*f, w*w
and f*w give local variances and covariance for every window position.
Only positions whose window lies fully inside the image are scored.
"""

from typing import Tuple

import numpy as np
from scipy.ndimage import uniform_filter


def _box(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    return uniform_filter(image, size=size, mode="constant", cval=0.0)


def _valid_positions(shape: Tuple[int, int], size: Tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    half_lateral, half_axial = size[0] // 2, size[1] // 2
    mask[half_lateral:shape[0] - half_lateral, half_axial:shape[1] - half_axial] = True
    return mask


def _filter_size(window: Tuple[int, int]) -> Tuple[int, int]:
    """(axial, lateral) window -> box filter size in [lateral][axial] order."""
    axial, lateral = window
    return (int(lateral), int(axial))


def local_ncc_terms(
    fixed: np.ndarray,
    warped: np.ndarray,
    window: Tuple[int, int] = (9, 9),
    variance_floor: float = 1e-12,
):
    """Per-position NCC and the local statistics needed for its gradient.

    A window whose fixed or warped variance falls below ``variance_floor``
    times the mean signal power scores 0.

    Returns:
        (ncc, valid, scored, mean_f, mean_w, var_f, var_w) where ``valid``
        marks window positions inside the image and ``scored`` the
        non-degenerate ones
    """
    fixed = np.asarray(fixed, dtype=float)
    warped = np.asarray(warped, dtype=float)
    if fixed.shape != warped.shape:
        raise ValueError(f"image shapes differ: {fixed.shape} vs {warped.shape}")
    size = _filter_size(window)
    if size[0] > fixed.shape[0] or size[1] > fixed.shape[1]:
        raise ValueError(f"window {window} does not fit images of shape {fixed.shape}")

    mean_f = _box(fixed, size)
    mean_w = _box(warped, size)
    var_f = np.maximum(_box(fixed * fixed, size) - mean_f ** 2, 0.0)
    var_w = np.maximum(_box(warped * warped, size) - mean_w ** 2, 0.0)
    cov = _box(fixed * warped, size) - mean_f * mean_w

    valid = _valid_positions(fixed.shape, size)
    power = 0.5 * (np.mean(fixed ** 2) + np.mean(warped ** 2))
    floor = variance_floor * max(power, np.finfo(float).tiny)
    scored = valid & (var_f > floor) & (var_w > floor)

    ncc = np.zeros(fixed.shape)
    ncc[scored] = cov[scored] / np.sqrt(var_f[scored] * var_w[scored])
    return ncc, valid, scored, mean_f, mean_w, var_f, var_w


def lncc_similarity(
    fixed: np.ndarray,
    warped: np.ndarray,
    window: Tuple[int, int] = (9, 9),
    variance_floor: float = 1e-12,
) -> float:
    """Negative mean local NCC over all window positions (-1 for a perfect match).

    Args:
        fixed: Fixed image ([lateral][axial])
        warped: Warped moving image, same shape
        window: (axial, lateral) window size in pixels, odd
        variance_floor: Relative variance below which a window scores 0

    Returns:
        Similarity in [-1, 1]
    """
    ncc, valid, _, _, _, _, _ = local_ncc_terms(fixed, warped, window, variance_floor)
    return -float(ncc[valid].sum() / np.count_nonzero(valid))


def lncc_gradient(
    fixed: np.ndarray,
    warped: np.ndarray,
    window: Tuple[int, int] = (9, 9),
    variance_floor: float = 1e-12,
) -> Tuple[float, np.ndarray]:
    """Similarity and its derivative with respect to every warped pixel."""
    fixed = np.asarray(fixed, dtype=float)
    warped = np.asarray(warped, dtype=float)
    ncc, valid, scored, mean_f, mean_w, var_f, var_w = local_ncc_terms(
        fixed, warped, window, variance_floor
    )
    size = _filter_size(window)
    n_positions = np.count_nonzero(valid)

    a = np.zeros(fixed.shape)
    b = np.zeros(fixed.shape)
    a[scored] = 1.0 / np.sqrt(var_f[scored] * var_w[scored])
    b[scored] = ncc[scored] / var_w[scored]

    # d ncc_c / d w_k = (a_c (f_k - mean_f_c) - b_c (w_k - mean_w_c)) / n, summed over windows c holding k
    gradient = (
        fixed * _box(a, size) - _box(a * mean_f, size)
        - warped * _box(b, size) + _box(b * mean_w, size)
    )
    return -float(ncc[valid].sum() / n_positions), -gradient / n_positions


def second_differences(field: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Axial and lateral second differences of a [lateral][axial] field."""
    field = np.asarray(field, dtype=float)
    return np.diff(field, n=2, axis=1), np.diff(field, n=2, axis=0)


def curvature_penalty(field: np.ndarray, lateral: bool = True) -> float:
    """Sum of absolute second differences of the field.

    The axial term runs over every position with both axial neighbours, the
    lateral term over every position with both lateral neighbours.
    """
    axial_diff, lateral_diff = second_differences(field)
    total = float(np.abs(axial_diff).sum())
    if lateral:
        total += float(np.abs(lateral_diff).sum())
    return total


def _charbonnier(d: np.ndarray, eps: float) -> np.ndarray:
    return np.sqrt(d * d + eps * eps) - eps


def _second_difference_adjoint(weights: np.ndarray, axis: int, shape: Tuple[int, int]) -> np.ndarray:
    result = np.zeros(shape)
    n = shape[axis]
    head = [slice(None)] * 2
    middle = [slice(None)] * 2
    tail = [slice(None)] * 2
    head[axis] = slice(0, n - 2)
    middle[axis] = slice(1, n - 1)
    tail[axis] = slice(2, n)
    result[tuple(head)] += weights
    result[tuple(middle)] -= 2.0 * weights
    result[tuple(tail)] += weights
    return result


def smooth_curvature_penalty(
    field: np.ndarray, eps: float, lateral: bool = True
) -> Tuple[float, np.ndarray]:
    """Charbonnier-smoothed penalty sum(sqrt(d^2 + eps^2) - eps) and its gradient."""
    field = np.asarray(field, dtype=float)
    axial_diff, lateral_diff = second_differences(field)
    value = float(_charbonnier(axial_diff, eps).sum())
    gradient = _second_difference_adjoint(
        axial_diff / np.sqrt(axial_diff ** 2 + eps ** 2), 1, field.shape
    )
    if lateral and field.shape[0] >= 3:
        value += float(_charbonnier(lateral_diff, eps).sum())
        gradient += _second_difference_adjoint(
            lateral_diff / np.sqrt(lateral_diff ** 2 + eps ** 2), 0, field.shape
        )
    return value, gradient
