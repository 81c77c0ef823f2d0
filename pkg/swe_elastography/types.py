"""Type definitions for the shear-wave elastography toolkit.

All arrays that describe an image plane are indexed ``[lateral][axial]``;
time sequences add a leading frame axis: ``[frame][lateral][axial]``.
"""

import hashlib
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from swe_elastography.exceptions import ConfigurationError, DataValidationError, PhantomSpecError

# Sanity bound on tracked or simulated displacement magnitudes (m).
MAX_DISPLACEMENT = 1e-3


def _read_only(array: np.ndarray) -> np.ndarray:
    view = array.view()
    view.flags.writeable = False
    return view


class RoiRole(Enum):
    """Role tag of a region of interest."""
    BACKGROUND = "background"
    INCLUSION = "inclusion"
    GLOBAL = "global"


@dataclass(frozen=True)
class ScanGeometry:
    """Acquisition geometry of an RF frame sequence."""

    n_axial: int = 1552
    n_lateral: int = 128
    n_frames: int = 50
    sampling_freq: float = 40e6
    center_freq: float = 7e6
    sound_speed: float = 1540.0
    lateral_pitch: float = 2.0e-4
    prf: float = 1.0e4
    push_lateral_index: Optional[int] = None
    push_depth: float = 1.9e-2
    # Phantom-frame lateral coordinate of the push line.
    push_lateral_position: float = 1.25e-2

    def __post_init__(self):
        for name in ("n_axial", "n_lateral", "n_frames"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value}")
        for name in ("sampling_freq", "center_freq", "sound_speed", "lateral_pitch", "prf"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.push_depth < 0:
            raise ConfigurationError(f"push_depth must be >= 0, got {self.push_depth}")
        if self.push_lateral_index is None:
            object.__setattr__(self, "push_lateral_index", self.n_lateral // 2)
        if not 0 <= self.push_lateral_index < self.n_lateral:
            raise ConfigurationError(
                f"push_lateral_index {self.push_lateral_index} outside [0, {self.n_lateral})"
            )

    @property
    def axial_spacing(self) -> float:
        """Axial sample spacing in metres (c / 2 fs)."""
        return self.sound_speed / (2.0 * self.sampling_freq)

    @property
    def frame_interval(self) -> float:
        return 1.0 / self.prf

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.n_frames, self.n_lateral, self.n_axial)

    @property
    def frame_shape(self) -> Tuple[int, int]:
        return (self.n_lateral, self.n_axial)

    def axial_positions(self) -> np.ndarray:
        """Depth of every axial sample (m)."""
        return np.arange(self.n_axial) * self.axial_spacing

    def lateral_positions(self) -> np.ndarray:
        """Phantom-frame lateral coordinate of every scan line (m)."""
        offsets = np.arange(self.n_lateral) - self.push_lateral_index
        return self.push_lateral_position + offsets * self.lateral_pitch

    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) / self.prf

    def with_dims(self, n_frames: int, n_lateral: int, n_axial: int) -> "ScanGeometry":
        """Copy with new dimensions; the push line is re-centred if it no longer fits."""
        push_index = self.push_lateral_index if self.push_lateral_index < n_lateral else None
        return replace(
            self, n_frames=n_frames, n_lateral=n_lateral, n_axial=n_axial,
            push_lateral_index=push_index,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_axial": self.n_axial,
            "n_lateral": self.n_lateral,
            "n_frames": self.n_frames,
            "sampling_freq": self.sampling_freq,
            "center_freq": self.center_freq,
            "sound_speed": self.sound_speed,
            "lateral_pitch": self.lateral_pitch,
            "prf": self.prf,
            "push_lateral_index": self.push_lateral_index,
            "push_depth": self.push_depth,
            "push_lateral_position": self.push_lateral_position,
        }


@dataclass(frozen=True)
class FrameStack:
    """Time sequence of RF frames; frame 0 is the pre-push reference."""

    geometry: ScanGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.shape != self.geometry.shape:
            raise DataValidationError(
                f"frame data shape {data.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise DataValidationError("frame data contains non-finite values")
        object.__setattr__(self, "data", _read_only(data))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def reference(self) -> np.ndarray:
        return self.data[0]

    def frame(self, index: int) -> np.ndarray:
        return self.data[index]


@dataclass(frozen=True)
class DisplacementStack:
    """Per-frame dense displacement fields in metres (positive = deeper)."""

    geometry: ScanGeometry
    axial: np.ndarray
    lateral: Optional[np.ndarray] = None

    def __post_init__(self):
        axial = np.asarray(self.axial)
        if axial.shape != self.geometry.shape:
            raise DataValidationError(
                f"axial displacement shape {axial.shape} does not match geometry {self.geometry.shape}"
            )
        if not np.all(np.isfinite(axial)):
            raise DataValidationError("axial displacement contains non-finite values")
        if np.any(axial[0] != 0):
            raise DataValidationError("frame 0 displacement must be identically zero")
        if np.any(np.abs(axial) >= MAX_DISPLACEMENT):
            raise DataValidationError(
                f"axial displacement exceeds sanity bound of {MAX_DISPLACEMENT} m"
            )
        object.__setattr__(self, "axial", _read_only(axial))
        if self.lateral is not None:
            lateral = np.asarray(self.lateral)
            if lateral.shape != axial.shape:
                raise DataValidationError("lateral displacement shape differs from axial")
            if not np.all(np.isfinite(lateral)):
                raise DataValidationError("lateral displacement contains non-finite values")
            object.__setattr__(self, "lateral", _read_only(lateral))

    @property
    def n_frames(self) -> int:
        return self.axial.shape[0]

    def peak(self) -> float:
        """Largest absolute axial displacement (m)."""
        return float(np.max(np.abs(self.axial)))

    @classmethod
    def zeros(cls, geometry: ScanGeometry) -> "DisplacementStack":
        return cls(geometry=geometry, axial=np.zeros(geometry.shape))


@dataclass(frozen=True)
class InclusionSpec:
    """Circular section of a spherical inclusion through the imaging plane."""
    center_axial: float
    center_lateral: float
    radius: float
    youngs: float


@dataclass(frozen=True)
class PhantomSpec:
    """Elasticity phantom description."""

    background_youngs: float
    extent_axial: float = 0.035
    extent_lateral: float = 0.025
    inclusion: Optional[InclusionSpec] = None
    poissons_ratio: float = 0.495
    density: float = 1000.0
    attenuation: float = 0.45

    # Ranges of the generated phantom population.
    BACKGROUND_RANGE = (15e3, 30e3)
    RADIUS_RANGE = (1.5e-3, 5e-3)
    STIFFNESS_RATIO_RANGE = (1.5, 4.0)

    def __post_init__(self):
        low, high = self.BACKGROUND_RANGE
        if not low <= self.background_youngs <= high:
            raise PhantomSpecError(
                f"background_youngs {self.background_youngs} outside [{low}, {high}] Pa"
            )
        if not self.extent_axial > 0 or not self.extent_lateral > 0:
            raise PhantomSpecError("phantom extents must be > 0")
        if not 0 < self.poissons_ratio < 0.5:
            raise PhantomSpecError(f"poissons_ratio {self.poissons_ratio} outside (0, 0.5)")
        if not self.density > 0:
            raise PhantomSpecError(f"density must be > 0, got {self.density}")
        if self.attenuation < 0:
            raise PhantomSpecError(f"attenuation must be >= 0, got {self.attenuation}")
        if self.inclusion is not None:
            low, high = self.RADIUS_RANGE
            if not low <= self.inclusion.radius <= high:
                raise PhantomSpecError(
                    f"inclusion_radius {self.inclusion.radius} outside [{low}, {high}] m"
                )
            ratio = self.inclusion.youngs / self.background_youngs
            low, high = self.STIFFNESS_RATIO_RANGE
            if not low <= ratio <= high:
                raise PhantomSpecError(
                    f"inclusion stiffness ratio {ratio:.3f} outside [{low}, {high}]"
                )

    @property
    def is_homogeneous(self) -> bool:
        return self.inclusion is None

    def youngs_at(self, axial: np.ndarray, lateral: np.ndarray) -> np.ndarray:
        """Young's modulus at phantom-frame positions (broadcast together)."""
        axial, lateral = np.broadcast_arrays(np.asarray(axial, float), np.asarray(lateral, float))
        youngs = np.full(axial.shape, float(self.background_youngs))
        if self.inclusion is not None:
            inc = self.inclusion
            inside = (axial - inc.center_axial) ** 2 + (lateral - inc.center_lateral) ** 2 <= inc.radius ** 2
            youngs[inside] = inc.youngs
        return youngs

    def to_dict(self) -> Dict[str, float]:
        entries = {
            "extent_axial": self.extent_axial,
            "extent_lateral": self.extent_lateral,
            "background_youngs": self.background_youngs,
            "poissons_ratio": self.poissons_ratio,
            "density": self.density,
            "attenuation": self.attenuation,
        }
        if self.inclusion is not None:
            entries.update({
                "inclusion_center_axial": self.inclusion.center_axial,
                "inclusion_center_lateral": self.inclusion.center_lateral,
                "inclusion_radius": self.inclusion.radius,
                "inclusion_youngs": self.inclusion.youngs,
            })
        return entries

    def to_text(self) -> str:
        """Canonical ``key = value`` rendering (parseable by load_phantom_spec)."""
        return "".join(f"{key} = {value!r}\n" for key, value in self.to_dict().items())

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ElasticityMap:
    """Per-pixel Young's modulus (Pa) with validity mask."""

    values: np.ndarray
    valid: np.ndarray
    geometry: Optional[ScanGeometry] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise DataValidationError(
                f"values {values.shape} and mask {valid.shape} must be equal 2D shapes"
            )
        if not np.all(np.isfinite(values[valid])):
            raise DataValidationError("elasticity values must be finite on valid pixels")
        if self.geometry is not None and values.shape != self.geometry.frame_shape:
            raise DataValidationError("map shape does not match geometry")
        object.__setattr__(self, "values", _read_only(values))
        object.__setattr__(self, "valid", _read_only(valid))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def valid_fraction(self, exclusion: Optional[np.ndarray] = None) -> float:
        region = np.ones(self.shape, bool) if exclusion is None else ~exclusion
        total = np.count_nonzero(region)
        return float(np.count_nonzero(self.valid & region) / total) if total else 0.0


@dataclass(frozen=True)
class SWSMap:
    """Per-pixel shear-wave speed (m/s) with correlation quality and validity."""

    speed: np.ndarray
    peak_corr: np.ndarray
    valid: np.ndarray
    time_lag: Optional[np.ndarray] = None
    geometry: Optional[ScanGeometry] = None

    def __post_init__(self):
        speed = np.asarray(self.speed, dtype=float)
        for name in ("peak_corr", "valid"):
            if np.shape(getattr(self, name)) != speed.shape:
                raise DataValidationError(f"{name} shape differs from speed shape")
        object.__setattr__(self, "speed", _read_only(speed))
        object.__setattr__(self, "valid", _read_only(np.asarray(self.valid, dtype=bool)))


@dataclass(frozen=True)
class MaterialField:
    """Rasterised material properties on the finite-difference grid (sponge included)."""

    h: float
    youngs: np.ndarray
    shear_modulus: np.ndarray
    density: float
    damping: np.ndarray
    shear_speed: np.ndarray
    lateral: np.ndarray
    axial: np.ndarray
    sponge_cells: int = 15
    # Harmonic means of mu between neighbouring nodes, along each axis.
    mu_face_lateral: Optional[np.ndarray] = None
    mu_face_axial: Optional[np.ndarray] = None

    def __post_init__(self):
        mu = np.asarray(self.shear_modulus, dtype=float)
        if mu.shape != np.shape(self.youngs) or np.any(mu <= 0):
            raise DataValidationError("shear modulus must be positive on the whole grid")
        if self.mu_face_lateral is None:
            object.__setattr__(self, "mu_face_lateral", 2.0 * mu[1:, :] * mu[:-1, :] / (mu[1:, :] + mu[:-1, :]))
        if self.mu_face_axial is None:
            object.__setattr__(self, "mu_face_axial", 2.0 * mu[:, 1:] * mu[:, :-1] / (mu[:, 1:] + mu[:, :-1]))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.youngs.shape

    @property
    def c_max(self) -> float:
        return float(np.max(self.shear_speed))

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        s = self.sponge_cells
        mask[s:self.shape[0] - s, s:self.shape[1] - s] = True
        return mask


@dataclass
class WaveState:
    """Solver state: displacement at t, velocity at t - dt/2 (leapfrog staggering)."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> "WaveState":
        return cls(u=np.zeros(shape), v=np.zeros(shape), t=0.0)


@dataclass(frozen=True)
class ScattererCloud:
    """Point scatterers seeded in a phantom."""

    axial: np.ndarray
    lateral: np.ndarray
    amplitudes: np.ndarray
    seed: int

    @property
    def count(self) -> int:
        return int(self.amplitudes.size)

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.axial, self.lateral])


@dataclass
class Ddf:
    """Dense displacement field (m) mapping a moving frame onto the fixed frame."""

    axial: np.ndarray
    lateral: Optional[np.ndarray] = None

    def __post_init__(self):
        self.axial = np.asarray(self.axial, dtype=float)
        if self.lateral is None:
            self.lateral = np.zeros_like(self.axial)
        else:
            self.lateral = np.asarray(self.lateral, dtype=float)

    @classmethod
    def zeros(cls, shape: Tuple[int, int]) -> "Ddf":
        return cls(axial=np.zeros(shape), lateral=np.zeros(shape))


@dataclass(frozen=True)
class Roi:
    """Rectangle or disk region in phantom coordinates (m)."""

    role: RoiRole
    axial_range: Optional[Tuple[float, float]] = None
    lateral_range: Optional[Tuple[float, float]] = None
    center: Optional[Tuple[float, float]] = None
    radius: Optional[float] = None

    @property
    def is_disk(self) -> bool:
        return self.center is not None

    def mask(self, geometry: ScanGeometry) -> np.ndarray:
        """Rasterise the region on the scan grid ([lateral][axial])."""
        lateral = geometry.lateral_positions()[:, None]
        axial = geometry.axial_positions()[None, :]
        if self.is_disk:
            center_axial, center_lateral = self.center
            return (axial - center_axial) ** 2 + (lateral - center_lateral) ** 2 <= self.radius ** 2
        mask = np.ones(geometry.frame_shape, bool)
        if self.axial_range is not None:
            mask &= (axial >= self.axial_range[0]) & (axial <= self.axial_range[1])
        if self.lateral_range is not None:
            mask &= (lateral >= self.lateral_range[0]) & (lateral <= self.lateral_range[1])
        return mask


@dataclass(frozen=True)
class RoiStats:
    """Mean and population standard deviation over a region."""
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class NccProfile:
    """Normalised cross-correlation values for lags -max_lag..max_lag."""
    values: np.ndarray
    degenerate: bool = False

    @property
    def max_lag(self) -> int:
        return (self.values.size - 1) // 2


@dataclass(frozen=True)
class PeakEstimate:
    """Sub-sample peak position within a correlation profile."""
    position: float
    index: int
    refined: bool
    value: float


@dataclass(frozen=True)
class TimeLag:
    """Arrival-time difference between two lateral positions."""
    delta_t: float
    lag_frames: float
    quality: float
    refined: bool
    degenerate: bool = False

    @property
    def is_valid(self) -> bool:
        return not self.degenerate and math.isfinite(self.delta_t)


@dataclass(frozen=True)
class LossRecord:
    """One accepted iterate of the variational tracker."""
    frame: int
    level: int
    iteration: int
    similarity: float
    penalty: float
    total: float


@dataclass
class TrackingResult:
    """Tracked displacements plus optimizer diagnostics."""
    displacement: DisplacementStack
    tracker: str
    loss_trace: List[LossRecord] = field(default_factory=list)
    underflow_frames: List[int] = field(default_factory=list)
    parameters: Dict[str, Any] = field(default_factory=dict)


@dataclass
class SimulationResult:
    """Ground-truth displacement movie and the numbers needed to reproduce it."""
    displacement: DisplacementStack
    calibration_factor: float
    h: float
    dt: float
    peak_displacement: float
    phantom_digest: str
    n_steps: int = 0
