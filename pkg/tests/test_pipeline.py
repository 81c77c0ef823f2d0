"""Integration tests for the end-to-end pipeline."""

import os

import numpy as np
import pandas as pd
import pytest

from swe_elastography.config import ElastographyConfig, GenerateConfig, VariationalConfig
from swe_elastography.core import RunManifest, band_median, load_phantom_spec, read_stack, write_stack
from swe_elastography.core.manifest import MANIFEST_NAME, STATUS_FAILED, STATUS_OK
from swe_elastography.exceptions import ConfigurationError
from swe_elastography.pipeline import (
    DISPLACEMENT_STACK,
    EXCLUSION_MASK,
    GENERATED_PHANTOMS,
    LOSS_TRACE,
    RESULTS_TABLE,
    RF_STACK,
    SUMMARY_TABLE,
    TRUTH_MAP,
    TRUTH_STACK,
    VALID_MASK,
    YOUNGS_IMAGE,
    YOUNGS_MAP,
    ElastographyPipeline,
    phantom_id_for,
)
from swe_elastography.types import DisplacementStack, InclusionSpec, PhantomSpec


@pytest.fixture
def tiny_config(make_tiny_config):
    """Provide the fast configuration with the truth tracker."""
    return ElastographyConfig.from_file(make_tiny_config())


@pytest.fixture
def simulated(tiny_config, tmp_path):
    """Provide a pipeline and its simulate-stage artifacts."""
    pipeline = ElastographyPipeline(tiny_config)
    spec = load_phantom_spec(tiny_config.phantoms[0])
    return pipeline, pipeline.simulate(spec, str(tmp_path / "sim"), "phantom")


def test_phantom_id_for():
    assert phantom_id_for("/data/specs/inclusion_03.txt") == "inclusion_03"


@pytest.mark.integration
class TestStages:
    """Test suite for the individual pipeline stages."""

    def test_simulate_writes_artifacts(self, simulated):
        _, artifacts = simulated
        for name in (TRUTH_STACK, RF_STACK, "phantom.txt", TRUTH_MAP, MANIFEST_NAME):
            assert os.path.exists(os.path.join(artifacts.directory, name))
        assert artifacts.rf.data.shape == artifacts.truth.geometry.shape == (16, 24, 200)
        assert artifacts.truth.peak() == pytest.approx(2e-5, rel=1e-6)
        assert load_phantom_spec(artifacts.paths["phantom"]) == artifacts.spec

        manifest = RunManifest.from_file(os.path.join(artifacts.directory, MANIFEST_NAME))
        assert manifest.status == STATUS_OK
        assert manifest.seeds == {"simulation": 3}
        assert manifest.parameters["phantom_digest"] == artifacts.spec.digest()

    def test_ncc_track_round_trips_through_disk(self, simulated, tmp_path):
        pipeline, artifacts = simulated
        result = pipeline.track(artifacts.rf, "ncc", str(tmp_path / "ncc"))
        stored = pipeline.load_displacement(str(tmp_path / "ncc" / DISPLACEMENT_STACK))
        assert stored.geometry.shape == artifacts.rf.geometry.shape
        np.testing.assert_allclose(stored.axial, result.displacement.axial, rtol=1e-6, atol=1e-12)
        assert not os.path.exists(tmp_path / "ncc" / LOSS_TRACE)

    def test_variational_track_writes_loss_trace(self, simulated, tmp_path):
        pipeline, artifacts = simulated
        pipeline.variational_tracker.config = VariationalConfig(pyramid_levels=1, iters_per_level=3)
        pipeline.track(artifacts.rf, "variational", str(tmp_path / "var"))
        assert os.path.exists(tmp_path / "var" / LOSS_TRACE)
        assert os.path.exists(tmp_path / "var" / DISPLACEMENT_STACK)

    def test_truth_tracker_needs_truth(self, simulated, tmp_path):
        pipeline, artifacts = simulated
        with pytest.raises(ConfigurationError):
            pipeline.track(artifacts.rf, "truth", str(tmp_path / "t"))
        with pytest.raises(ConfigurationError):
            pipeline.track(artifacts.rf, "optical-flow", str(tmp_path / "t"))

    def test_reconstruct_exports_maps(self, simulated, tmp_path):
        pipeline, artifacts = simulated
        out_dir = tmp_path / "rec"
        reconstruction = pipeline.reconstruct(artifacts.truth, str(out_dir), artifacts.spec.density)
        for name in ("sws.csv", "youngs_raw.csv", YOUNGS_MAP, YOUNGS_IMAGE, VALID_MASK, EXCLUSION_MASK):
            assert os.path.exists(out_dir / name)
        assert reconstruction.exclusion[:, 0].sum() == 5
        stored = pipeline.load_map(str(out_dir / YOUNGS_MAP))
        np.testing.assert_array_equal(stored.valid, reconstruction.youngs.valid)

    def test_geometry_follows_stack_header(self, tiny_config, tmp_path):
        pipeline = ElastographyPipeline(tiny_config)
        geometry = tiny_config.geometry.with_dims(8, 10, 60)
        path = str(tmp_path / "small.swf")
        write_stack(DisplacementStack.zeros(geometry), path)
        loaded = pipeline.load_displacement(path)
        assert loaded.geometry.shape == (8, 10, 60)
        assert loaded.geometry.push_lateral_index == 5


@pytest.mark.integration
@pytest.mark.slow
class TestRun:
    """Test suite for whole pipeline runs."""

    def test_truth_run(self, tiny_config):
        rows = ElastographyPipeline(tiny_config).run()
        out_dir = tiny_config.output_dir
        assert len(rows) == 1
        row = rows[0]
        assert (row.phantom_id, row.tracker) == ("phantom", "truth")
        assert row.cnr is None
        assert row.mae_background >= 0.0
        assert 0.0 < row.valid_fraction <= 1.0

        for name in (RF_STACK, TRUTH_STACK, TRUTH_MAP, RESULTS_TABLE):
            assert os.path.exists(os.path.join(out_dir, name))
        truth_dir = os.path.join(out_dir, "truth")
        for name in (DISPLACEMENT_STACK, YOUNGS_MAP, YOUNGS_IMAGE, VALID_MASK, EXCLUSION_MASK):
            assert os.path.exists(os.path.join(truth_dir, name))
        stored = read_stack(os.path.join(truth_dir, DISPLACEMENT_STACK), kind="displacement")
        assert stored.n_frames == 16

        manifest = RunManifest.from_file(os.path.join(out_dir, MANIFEST_NAME))
        assert manifest.status == STATUS_OK
        assert manifest.stages == [
            "phantom/simulate", "phantom/truth/track", "phantom/truth/reconstruct", "phantom/truth/evaluate",
        ]
        assert len(manifest.parameters["rows"]) == 1

    def test_rerun_replaces_results(self, tiny_config):
        pipeline = ElastographyPipeline(tiny_config)
        pipeline.run()
        pipeline.run()
        with open(os.path.join(tiny_config.output_dir, RESULTS_TABLE)) as f:
            assert len(f.read().splitlines()) == 2

    def test_runs_are_reproducible(self, make_tiny_config, tmp_path):
        first = ElastographyConfig.from_file(make_tiny_config(output_dir="first"))
        second = ElastographyConfig.from_file(make_tiny_config(output_dir="second"))
        ElastographyPipeline(first).run()
        ElastographyPipeline(second).run()
        for name in (RF_STACK, os.path.join("truth", YOUNGS_MAP)):
            with open(tmp_path / "first" / name, "rb") as a, open(tmp_path / "second" / name, "rb") as b:
                assert a.read() == b.read()

    def test_missing_phantom_marks_manifest_failed(self, tiny_config):
        os.remove(tiny_config.phantoms[0])
        with pytest.raises(FileNotFoundError):
            ElastographyPipeline(tiny_config).run()
        manifest = RunManifest.from_file(os.path.join(tiny_config.output_dir, MANIFEST_NAME))
        assert manifest.status == STATUS_FAILED
        assert manifest.failed_stage == "phantom/load"
        assert manifest.error.startswith("FileNotFoundError")

    def test_no_phantom_configured(self, tmp_path):
        config = ElastographyConfig(output_dir=str(tmp_path / "out"), trackers=["truth"])
        with pytest.raises(ConfigurationError):
            ElastographyPipeline(config).run()

    def test_summary_written_next_to_results(self, tiny_config):
        ElastographyPipeline(tiny_config).run()
        summary = pd.read_csv(os.path.join(tiny_config.output_dir, SUMMARY_TABLE))
        assert list(summary["tracker"]) == ["truth"]
        assert summary["n_phantoms"][0] == 1
        results = pd.read_csv(os.path.join(tiny_config.output_dir, RESULTS_TABLE))
        assert summary["mae_background_mean"][0] == pytest.approx(results["mae_background"][0])
        assert np.isnan(summary["mae_background_std"][0])
        manifest = RunManifest.from_file(os.path.join(tiny_config.output_dir, MANIFEST_NAME))
        assert manifest.artifacts["summary"] == os.path.join(tiny_config.output_dir, SUMMARY_TABLE)

    def test_unexpected_error_marks_manifest_failed(self, tiny_config, monkeypatch):
        def broken(*args, **kwargs):
            raise ValueError("tracker crashed")

        pipeline = ElastographyPipeline(tiny_config)
        monkeypatch.setattr(pipeline, "track", broken)
        with pytest.raises(ValueError):
            pipeline.run()
        manifest = RunManifest.from_file(os.path.join(tiny_config.output_dir, MANIFEST_NAME))
        assert manifest.status == STATUS_FAILED
        assert manifest.failed_stage == "phantom/truth/track"
        assert manifest.error == "ValueError: tracker crashed"
        assert manifest.stages == ["phantom/simulate"]

    @pytest.mark.integration
    def test_generated_population(self, tiny_config):
        tiny_config.generate = GenerateConfig(count=2, youngs_range=(20e3, 25e3), inclusion_probability=0.0)
        pipeline = ElastographyPipeline(tiny_config)
        rows = pipeline.run()
        out_dir = tiny_config.output_dir
        assert [row.phantom_id for row in rows] == ["phantom", "generated_000", "generated_001"]
        for index in range(2):
            path = os.path.join(out_dir, GENERATED_PHANTOMS, f"generated_{index:03d}.txt")
            spec = load_phantom_spec(path)
            assert 20e3 <= spec.background_youngs <= 25e3
            assert os.path.exists(os.path.join(out_dir, f"generated_{index:03d}", RF_STACK))
        summary = pd.read_csv(os.path.join(out_dir, SUMMARY_TABLE))
        assert summary["n_phantoms"][0] == 3

    def test_generated_specs_follow_seed(self, tiny_config, tmp_path):
        tiny_config.generate = GenerateConfig(count=3)
        pipeline = ElastographyPipeline(tiny_config)
        first = [load_phantom_spec(p) for p in pipeline.phantom_paths(str(tmp_path / "a"))]
        second = [load_phantom_spec(p) for p in pipeline.phantom_paths(str(tmp_path / "b"))]
        assert len(first) == 4
        assert first == second


@pytest.mark.integration
@pytest.mark.slow
class TestAccuracy:
    """Test suite for reconstruction accuracy at the default full-size settings."""

    @pytest.fixture
    def default_pipeline(self, tmp_path):
        """Provide a default-configured pipeline writing into tmp_path."""
        return ElastographyPipeline(ElastographyConfig(output_dir=str(tmp_path / "out"), trackers=["ncc"]))

    def _reconstruct(self, pipeline, spec, out_dir):
        artifacts = pipeline.simulate(spec, os.path.join(out_dir, "sim"), "phantom")
        tracked = pipeline.track(artifacts.rf, "ncc", os.path.join(out_dir, "ncc"))
        reconstruction = pipeline.reconstruct(tracked.displacement, os.path.join(out_dir, "ncc"), spec.density)
        return artifacts, reconstruction

    @pytest.mark.parametrize("youngs", [15e3, 30e3])
    def test_homogeneous_band_median(self, default_pipeline, tmp_path, youngs):
        spec = PhantomSpec(background_youngs=youngs)
        artifacts, reconstruction = self._reconstruct(default_pipeline, spec, str(tmp_path))
        median = band_median(
            reconstruction.youngs, artifacts.truth.geometry, reconstruction.exclusion, default_pipeline.config.roi,
        )
        assert median == pytest.approx(youngs, rel=0.15)

    def test_inclusion_contrast(self, default_pipeline, tmp_path):
        spec = PhantomSpec(
            background_youngs=20e3,
            inclusion=InclusionSpec(center_axial=0.019, center_lateral=0.008, radius=3e-3, youngs=60e3),
        )
        artifacts, reconstruction = self._reconstruct(default_pipeline, spec, str(tmp_path))
        row = default_pipeline.evaluate(
            reconstruction.youngs, artifacts.truth_map, spec, reconstruction.exclusion,
            "inclusion", "ncc", geometry=artifacts.truth.geometry,
        )
        assert row.cnr >= 2.0
