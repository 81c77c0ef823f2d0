"""Pytest configuration and fixtures."""

import pytest

from swe_elastography.config import NccConfig, PushConfig, RoiConfig, SimulationConfig, TofConfig, VariationalConfig
from swe_elastography.core import (
    NccTracker,
    RfSimulator,
    ShearWaveSimulator,
    SwsReconstructor,
    VariationalTracker,
)
from swe_elastography.testing.generators import small_geometry, speckle_frame
from swe_elastography.types import InclusionSpec, PhantomSpec, ScanGeometry


@pytest.fixture
def geometry():
    """Provide a small scan geometry."""
    return small_geometry()


@pytest.fixture
def homogeneous_spec():
    """Provide a homogeneous 20 kPa phantom."""
    return PhantomSpec(background_youngs=20e3)


@pytest.fixture
def inclusion_spec():
    """Provide a phantom with a stiff inclusion at the push depth."""
    return PhantomSpec(
        background_youngs=20e3,
        inclusion=InclusionSpec(center_axial=0.019, center_lateral=0.008, radius=3e-3, youngs=50e3),
    )


@pytest.fixture
def speckle():
    """Provide a 32 x 256 RF speckle frame."""
    return speckle_frame(32, 256, seed=7)


@pytest.fixture
def ncc_config():
    """Provide a small-window NCC configuration."""
    return NccConfig(window_len=31, window_hop=10, max_lag=6)


@pytest.fixture
def ncc_tracker(ncc_config):
    """Provide an NccTracker instance."""
    return NccTracker(ncc_config)


@pytest.fixture
def variational_config():
    """Provide a fast variational tracker configuration."""
    return VariationalConfig(pyramid_levels=2, iters_per_level=50, lncc_window=(9, 9))


@pytest.fixture
def variational_tracker(variational_config):
    """Provide a VariationalTracker instance."""
    return VariationalTracker(variational_config)


@pytest.fixture
def tof_config():
    """Provide a TOF configuration without focal exclusion or filtering."""
    return TofConfig(
        max_lag_frames=10,
        axial_average_halfwidth=2,
        min_peak_corr=0.5,
        focal_exclusion_halfwidth=0.0,
        median_kernel=1,
    )


@pytest.fixture
def reconstructor(tof_config):
    """Provide an SwsReconstructor instance."""
    return SwsReconstructor(tof_config)


@pytest.fixture
def roi_config():
    """Provide the default ROI configuration."""
    return RoiConfig()


@pytest.fixture(scope="session")
def simulated_sequence():
    """Provide (RF stack, ground-truth displacement) of a small 20 kPa push sequence."""
    spec = PhantomSpec(background_youngs=20e3, extent_axial=0.01, extent_lateral=0.012)
    geometry = ScanGeometry(
        n_frames=8, n_lateral=32, n_axial=400, push_depth=0.004, push_lateral_position=0.005,
    )
    config = SimulationConfig(target_peak_displacement=4e-5, seed=11)
    truth = ShearWaveSimulator(config).simulate(
        spec, PushConfig(focal_depth=0.004, lateral_center=0.005), geometry,
    ).displacement
    rf = RfSimulator(config=config).simulate_rf_sequence(spec, truth)
    return rf, truth


TINY_PHANTOM = """\
# 10 x 10 mm lossless block
background_youngs = 15000
extent_axial = 0.01
extent_lateral = 0.01
attenuation = 0
"""

TINY_CONFIG = """\
phantom = phantom.txt
trackers = {trackers}
output_dir = {output_dir}
geometry.n_frames = 16
geometry.n_lateral = 24
geometry.n_axial = 200
geometry.push_depth = 0.002
geometry.push_lateral_position = 0.005
sim.h = 0.0002
sim.seed = 3
ncc.window_len = 31
ncc.window_hop = 10
ncc.max_lag = 6
tof.max_lag_frames = 5
tof.min_peak_corr = 0.3
tof.focal_exclusion_halfwidth = 0.0004
tof.median_kernel = 3
"""


@pytest.fixture
def make_tiny_config(tmp_path):
    """Provide a factory writing a phantom and a fast run configuration into tmp_path."""

    def factory(trackers: str = "truth", output_dir: str = "out") -> str:
        (tmp_path / "phantom.txt").write_text(TINY_PHANTOM)
        path = tmp_path / "run.conf"
        path.write_text(TINY_CONFIG.format(trackers=trackers, output_dir=tmp_path / output_dir))
        return str(path)

    return factory
