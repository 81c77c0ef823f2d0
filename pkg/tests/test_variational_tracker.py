"""Tests for the variational speckle tracker."""

import itertools

import numpy as np
import pandas as pd
import pytest

from swe_elastography.config import VariationalConfig
from swe_elastography.core.variational_tracker import (
    LOSS_TRACE_COLUMNS,
    VariationalObjective,
    VariationalTracker,
    downsample,
    envelope,
    upsample_field,
    variational_track_sequence,
    write_loss_trace,
)
from swe_elastography.exceptions import TrackingError
from swe_elastography.testing.generators import shift_frame, small_geometry, speckle_frame
from swe_elastography.types import FrameStack

AXIAL_SPACING = 1540.0 / (2 * 40e6)


def _shifted_stack(shifts, n_lateral=32, n_axial=128, seed=0):
    geometry = small_geometry(n_frames=len(shifts) + 1, n_lateral=n_lateral, n_axial=n_axial)
    reference = speckle_frame(n_lateral, n_axial, seed=seed)
    frames = [reference] + [shift_frame(reference, s) for s in shifts]
    return FrameStack(geometry=geometry, data=np.stack(frames))


class TestObjective:
    """Test suite for the loss and its gradient."""

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_matches_finite_differences(self, seed):
        fixed = speckle_frame(32, 32, seed=seed)
        moving = shift_frame(fixed, 0.5)
        objective = VariationalObjective(fixed, moving, AXIAL_SPACING, 2e-4, VariationalConfig())
        rng = np.random.default_rng(seed)
        u = rng.uniform(0.25, 0.75, fixed.shape) * AXIAL_SPACING
        _, gradient = objective.loss_in_metres(u)

        h = 1e-9
        numeric = np.zeros_like(u)
        for index in np.ndindex(u.shape):
            bumped = u.copy()
            bumped[index] += h
            upper, _ = objective.loss_in_metres(bumped)
            bumped[index] -= 2 * h
            lower, _ = objective.loss_in_metres(bumped)
            numeric[index] = (upper - lower) / (2 * h)
        assert np.linalg.norm(gradient - numeric) <= 1e-3 * np.linalg.norm(numeric)

    def test_exact_penalty_recorded(self):
        fixed = speckle_frame(8, 32, seed=1)
        config = VariationalConfig(alpha=0.5)
        objective = VariationalObjective(fixed, fixed, AXIAL_SPACING, 2e-4, config)
        axial = np.zeros(fixed.shape)
        axial[3, 10] = 1.0
        evaluation = objective.evaluate(axial)
        # one axial spike: |1| + |-2| + |1| along depth and across lines
        assert evaluation.penalty == pytest.approx(0.5 * 8 * AXIAL_SPACING)
        assert evaluation.total == pytest.approx(evaluation.similarity + evaluation.penalty)

    def test_lateral_curvature_can_be_disabled(self):
        fixed = speckle_frame(8, 32, seed=1)
        config = VariationalConfig(alpha=0.5, lateral_curvature=False)
        objective = VariationalObjective(fixed, fixed, AXIAL_SPACING, 2e-4, config)
        axial = np.zeros(fixed.shape)
        axial[3, 10] = 1.0
        assert objective.evaluate(axial).penalty == pytest.approx(0.5 * 4 * AXIAL_SPACING)


class TestPyramid:
    """Test suite for the image pyramid helpers."""

    def test_levels_limited_by_window(self):
        tracker = VariationalTracker(VariationalConfig(pyramid_levels=4, lncc_window=(9, 9)))
        assert tracker.pyramid_levels((16, 128)) == 1
        assert tracker.pyramid_levels((32, 128)) == 2
        assert tracker.pyramid_levels((72, 256)) == 4

    def test_window_must_fit(self):
        tracker = VariationalTracker(VariationalConfig(lncc_window=(9, 9)))
        with pytest.raises(TrackingError):
            tracker.pyramid_levels((8, 128))

    def test_pyramid_shapes(self):
        tracker = VariationalTracker(VariationalConfig(pyramid_levels=3))
        pyramid = tracker.build_pyramid(speckle_frame(33, 100, seed=0), 3)
        assert [level.shape for level in pyramid] == [(33, 100), (17, 50), (9, 25)]

    def test_envelope_is_non_negative(self, speckle):
        assert np.all(envelope(speckle) >= 0.0)

    def test_downsample_upsample_constant(self):
        coarse = downsample(np.full((10, 20), 3.0))
        np.testing.assert_allclose(coarse, 3.0)
        np.testing.assert_allclose(upsample_field(coarse, (10, 20)), 6.0)


class TestVariationalTracker:
    """Test suite for VariationalTracker."""

    def test_recovers_uniform_shifts(self, variational_tracker):
        shifts = [0.5, 1.0, 1.5]
        stack = _shifted_stack(shifts)
        result = variational_tracker.track(stack)
        assert result.tracker == "variational"
        axial = result.displacement.axial / stack.geometry.axial_spacing
        assert np.all(axial[0] == 0.0)
        for k, shift in enumerate(shifts, start=1):
            interior = axial[k, 4:-4, 8:-8]
            assert np.median(interior) == pytest.approx(shift, abs=0.2)

    def test_loss_trace_never_increases(self, variational_tracker):
        result = variational_tracker.track(_shifted_stack([0.7, 1.4]))
        assert result.loss_trace
        key = lambda record: (record.frame, record.level)
        for _, group in itertools.groupby(result.loss_trace, key=key):
            totals = [record.total for record in group]
            assert all(b <= a for a, b in zip(totals, totals[1:]))

    def test_identical_frames_stay_at_zero(self, variational_tracker):
        stack = _shifted_stack([0])
        result = variational_tracker.track(stack)
        np.testing.assert_array_equal(result.displacement.axial, 0.0)

    def test_lateral_estimate(self):
        config = VariationalConfig(pyramid_levels=1, iters_per_level=5, estimate_lateral=True)
        result = VariationalTracker(config).track(_shifted_stack([0.5]))
        assert result.displacement.lateral is not None
        assert result.displacement.lateral.shape == result.displacement.axial.shape
        assert np.all(result.displacement.lateral[0] == 0.0)

    def test_without_warm_start(self):
        config = VariationalConfig(pyramid_levels=1, iters_per_level=5, warm_start=False)
        first = VariationalTracker(config).track_sequence(_shifted_stack([0.3, 0.6]))
        single = VariationalTracker(config).track_sequence(_shifted_stack([0.6]))
        np.testing.assert_array_equal(first.axial[2], single.axial[1])

    def test_line_search_starts_from_twice_the_last_step(self, monkeypatch):
        config = VariationalConfig(pyramid_levels=1, iters_per_level=6)
        stack = _shifted_stack([0.8])
        calls = []
        original = VariationalObjective.evaluate

        def recording(self, axial, lateral=None, with_gradient=False):
            calls.append((np.array(axial, dtype=float), with_gradient))
            return original(self, axial, lateral, with_gradient)

        monkeypatch.setattr(VariationalObjective, "evaluate", recording)
        VariationalTracker(config).register(stack.reference, stack.frame(1), AXIAL_SPACING, 2e-4)

        segments = []
        for axial, with_gradient in calls:
            if with_gradient:
                segments.append((axial, []))
            else:
                base, steps = segments[-1]
                steps.append(float(np.max(np.abs(axial - base))))
        trials = [steps for _, steps in segments if steps]
        assert len(trials) >= 2
        assert trials[0][0] == pytest.approx(config.step_size)
        for accepted, following in zip(trials, trials[1:]):
            assert following[0] == pytest.approx(min(config.step_size, 2.0 * accepted[-1]), rel=1e-9)

    def test_single_frame(self, variational_tracker):
        geometry = small_geometry(n_frames=1, n_lateral=16, n_axial=64)
        with pytest.raises(TrackingError):
            variational_tracker.track(FrameStack(geometry=geometry, data=np.zeros(geometry.shape)))

    def test_functional_form(self):
        config = VariationalConfig(pyramid_levels=1, iters_per_level=3)
        stack = _shifted_stack([0.4])
        np.testing.assert_array_equal(
            variational_track_sequence(stack, config).axial,
            VariationalTracker(config).track_sequence(stack).axial,
        )

    def test_write_loss_trace(self, tmp_path):
        config = VariationalConfig(pyramid_levels=2, iters_per_level=4)
        result = VariationalTracker(config).track(_shifted_stack([0.5]))
        path = tmp_path / "loss_trace.csv"
        write_loss_trace(result.loss_trace, str(path))
        table = pd.read_csv(path)
        assert list(table.columns) == LOSS_TRACE_COLUMNS
        assert len(table) == len(result.loss_trace)
        assert set(table["level"]) == {0, 1}
        np.testing.assert_allclose(table["total"], table["similarity"] + table["penalty"], rtol=1e-12)


@pytest.mark.integration
@pytest.mark.slow
class TestTrackingFidelity:
    """Test suite for variational tracking of simulated push sequences."""

    def test_rmse_within_tenth_of_peak(self, simulated_sequence):
        rf, truth = simulated_sequence
        tracked = VariationalTracker().track_sequence(rf)
        interior = (slice(1, None), slice(4, -4), slice(60, -60))
        error = tracked.axial[interior] - truth.axial[interior]
        assert np.sqrt(np.mean(error ** 2)) <= 0.1 * truth.peak()
