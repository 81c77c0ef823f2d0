"""Tests for map export and run manifests."""

import json

import numpy as np
import pytest

from swe_elastography.core.exporters import (
    export_elasticity_map,
    export_mask_csv,
    pgm_pixels,
    read_map_csv,
    read_pgm,
)
from swe_elastography.core.manifest import STATUS_FAILED, STATUS_OK, RunManifest
from swe_elastography.exceptions import ExportError
from swe_elastography.types import ElasticityMap, ScanGeometry


@pytest.fixture
def emap():
    """Provide a 3 x 4 map with one invalid pixel."""
    values = np.array([
        [10e3, 20e3, 30e3, 40e3],
        [50e3, 60e3, 0.0, 120e3],
        [-5e3, 1.5, 2.25, 99e3],
    ])
    valid = np.ones(values.shape, bool)
    valid[1, 2] = False
    return ElasticityMap(values=values, valid=valid)


class TestCsvExport:
    """Test suite for CSV map export."""

    def test_layout(self, emap, tmp_path):
        path = tmp_path / "youngs.csv"
        export_elasticity_map(emap, str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == 3
        assert lines[0] == "10000,20000,30000,40000"
        assert lines[1].split(",")[2] == "nan"

    def test_read_back(self, emap, tmp_path):
        path = str(tmp_path / "youngs.csv")
        export_elasticity_map(emap, path)
        loaded = read_map_csv(path)
        np.testing.assert_array_equal(loaded.valid, emap.valid)
        np.testing.assert_array_equal(loaded.values[emap.valid], emap.values[emap.valid])

    def test_read_checks_geometry(self, emap, tmp_path):
        path = str(tmp_path / "youngs.csv")
        export_elasticity_map(emap, path)
        with pytest.raises(ExportError):
            read_map_csv(path, geometry=ScanGeometry(n_lateral=4, n_axial=3))
        loaded = read_map_csv(path, geometry=ScanGeometry(n_lateral=3, n_axial=4))
        assert loaded.geometry.frame_shape == (3, 4)

    def test_no_valid_pixel(self, tmp_path):
        empty = ElasticityMap(values=np.zeros((2, 2)), valid=np.zeros((2, 2), bool))
        with pytest.raises(ExportError):
            export_elasticity_map(empty, str(tmp_path / "youngs.csv"))

    def test_unknown_format(self, emap, tmp_path):
        with pytest.raises(ExportError):
            export_elasticity_map(emap, str(tmp_path / "youngs.png"), fmt="png")

    def test_creates_parent_directories(self, emap, tmp_path):
        path = tmp_path / "a" / "b" / "youngs.csv"
        export_elasticity_map(emap, str(path))
        assert path.exists()

    def test_mask_csv(self, tmp_path):
        path = tmp_path / "mask.csv"
        export_mask_csv(np.array([[True, False], [False, True]]), str(path))
        assert path.read_text() == "1,0\n0,1\n"

    def test_missing_map(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_map_csv(str(tmp_path / "absent.csv"))


class TestPgmExport:
    """Test suite for 16-bit PGM export."""

    def test_header_and_orientation(self, emap, tmp_path):
        path = tmp_path / "youngs.pgm"
        export_elasticity_map(emap, str(path), fmt="pgm")
        assert path.read_bytes().startswith(b"P5\n3 4\n65535\n")
        image = read_pgm(str(path))
        assert image.shape == (4, 3)
        np.testing.assert_array_equal(image, pgm_pixels(emap))

    def test_linear_scale_and_clamp(self, emap):
        pixels = pgm_pixels(emap)
        # [axial][lateral]
        assert pixels[0, 0] == round(0.1 * 65535)
        assert pixels[3, 1] == 65535
        assert pixels[0, 2] == 0
        assert pixels[2, 1] == 0


class TestRunManifest:
    """Test suite for RunManifest."""

    def test_save_and_load(self, tmp_path):
        manifest = RunManifest(command="simulate", seeds={"simulation": 7})
        manifest.parameters["calibration_factor"] = np.float64(2.5)
        manifest.add_artifact("rf", "rf.swf")
        manifest.complete_stage("simulate")
        manifest.mark_ok()
        path = str(tmp_path / "manifest.json")
        manifest.save_to_file(path)

        loaded = RunManifest.from_file(path)
        assert loaded.status == STATUS_OK
        assert loaded.seeds == {"simulation": 7}
        assert loaded.parameters["calibration_factor"] == 2.5
        assert loaded.artifacts == {"rf": "rf.swf"}
        assert loaded.stages == ["simulate"]
        assert "numpy" in loaded.versions

    def test_failed_stage_recorded(self, tmp_path):
        manifest = RunManifest(command="pipeline")
        manifest.complete_stage("simulate")
        manifest.mark_failed("track", ValueError("diverged"))
        path = tmp_path / "manifest.json"
        manifest.save_to_file(str(path))
        data = json.loads(path.read_text())
        assert data["status"] == STATUS_FAILED
        assert data["failed_stage"] == "track"
        assert data["error"] == "ValueError: diverged"
        assert data["stages"] == ["simulate"]

    def test_non_finite_values_serialise(self, tmp_path):
        manifest = RunManifest(command="evaluate", parameters={"snr": float("inf")})
        path = tmp_path / "manifest.json"
        manifest.save_to_file(str(path))
        assert json.loads(path.read_text())["parameters"]["snr"] == "inf"
