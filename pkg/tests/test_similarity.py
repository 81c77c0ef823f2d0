"""Tests for local NCC similarity and curvature regularisation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swe_elastography.core.similarity import (
    curvature_penalty,
    lncc_gradient,
    lncc_similarity,
    smooth_curvature_penalty,
)
from swe_elastography.testing.generators import speckle_frame


class TestLncc:
    """Test suite for the LNCC similarity."""

    def test_identical_images(self, speckle):
        assert lncc_similarity(speckle, speckle) == pytest.approx(-1.0, abs=1e-9)

    def test_inverted_images(self, speckle):
        assert lncc_similarity(speckle, -speckle) == pytest.approx(1.0, abs=1e-9)

    def test_constant_image_scores_zero(self, speckle):
        assert lncc_similarity(speckle, np.full(speckle.shape, 3.0)) == 0.0

    def test_window_must_fit(self):
        with pytest.raises(ValueError):
            lncc_similarity(np.ones((4, 40)), np.ones((4, 40)), window=(9, 9))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            lncc_similarity(np.ones((10, 40)), np.ones((10, 41)))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        fixed = rng.standard_normal((12, 14))
        warped = fixed + 0.5 * rng.standard_normal((12, 14))
        window = (5, 3)
        value, gradient = lncc_gradient(fixed, warped, window)
        assert value == pytest.approx(lncc_similarity(fixed, warped, window), abs=1e-14)
        h = 1e-6
        numeric = np.zeros_like(warped)
        for index in np.ndindex(warped.shape):
            bumped = warped.copy()
            bumped[index] += h
            upper = lncc_similarity(fixed, bumped, window)
            bumped[index] -= 2 * h
            lower = lncc_similarity(fixed, bumped, window)
            numeric[index] = (upper - lower) / (2 * h)
        assert np.linalg.norm(gradient - numeric) <= 1e-5 * np.linalg.norm(numeric)

    @pytest.mark.property
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        gain=st.floats(min_value=0.1, max_value=10.0),
        offset=st.floats(min_value=-5.0, max_value=5.0),
    )
    @settings(max_examples=30, deadline=None)
    def test_invariant_to_affine_intensity(self, seed, gain, offset):
        """Property: LNCC ignores gain and offset and is symmetric in its arguments."""
        fixed = speckle_frame(12, 40, seed=seed)
        warped = speckle_frame(12, 40, seed=seed + 1)
        base = lncc_similarity(fixed, warped)
        assert -1.0 <= base <= 1.0
        assert lncc_similarity(fixed, gain * warped + offset) == pytest.approx(base, abs=1e-9)
        assert lncc_similarity(warped, fixed) == pytest.approx(base, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_independent_noise_scores_near_zero(self, seed):
        rng = np.random.default_rng(seed)
        fixed = rng.standard_normal((128, 1552))
        warped = rng.standard_normal((128, 1552))
        assert abs(lncc_similarity(fixed, warped)) <= 0.05


class TestCurvaturePenalty:
    """Test suite for the second-difference penalty."""

    def test_linear_field_is_free(self):
        lateral, axial = np.meshgrid(np.arange(6.0), np.arange(9.0), indexing="ij")
        assert curvature_penalty(2.0 * lateral - 3.0 * axial + 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_quadratic_field(self):
        lateral, axial = np.meshgrid(np.arange(4.0), np.arange(7.0), indexing="ij")
        field = axial ** 2 + 0.5 * lateral ** 2
        # axial: 4 lines x 5 positions x 2; lateral: 2 positions x 7 samples x 1
        assert curvature_penalty(field) == pytest.approx(40.0 + 14.0)
        assert curvature_penalty(field, lateral=False) == pytest.approx(40.0)

    def test_smooth_penalty_approaches_exact(self):
        field = speckle_frame(6, 20, seed=4)
        value, _ = smooth_curvature_penalty(field, eps=1e-9)
        assert value == pytest.approx(curvature_penalty(field), rel=1e-6)

    def test_smooth_gradient_matches_finite_differences(self):
        field = np.random.default_rng(8).standard_normal((5, 9))
        eps = 0.1
        _, gradient = smooth_curvature_penalty(field, eps)
        h = 1e-6
        numeric = np.zeros_like(field)
        for index in np.ndindex(field.shape):
            bumped = field.copy()
            bumped[index] += h
            upper, _ = smooth_curvature_penalty(bumped, eps)
            bumped[index] -= 2 * h
            lower, _ = smooth_curvature_penalty(bumped, eps)
            numeric[index] = (upper - lower) / (2 * h)
        np.testing.assert_allclose(gradient, numeric, rtol=1e-5, atol=1e-7)

    @pytest.mark.property
    @given(
        seed=st.integers(min_value=0, max_value=10_000),
        weight=st.floats(min_value=0.0, max_value=1.0),
        lateral=st.booleans(),
    )
    @settings(max_examples=50, deadline=None)
    def test_convex(self, seed, weight, lateral):
        """Property: the penalty of a blend never exceeds the blend of the penalties."""
        rng = np.random.default_rng(seed)
        first = rng.standard_normal((6, 12))
        second = 3.0 * rng.standard_normal((6, 12))
        blended = curvature_penalty(weight * first + (1.0 - weight) * second, lateral=lateral)
        bound = weight * curvature_penalty(first, lateral=lateral) + (1.0 - weight) * curvature_penalty(
            second, lateral=lateral
        )
        assert blended <= bound + 1e-9 * max(bound, 1.0)
