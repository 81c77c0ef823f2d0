"""Configuration management for the shear-wave elastography toolkit.

Configuration files use a flat ``key = value`` grammar with ``#`` comments.
Component settings are addressed with dotted section prefixes, e.g.
``variational.alpha = 0.02`` or ``geometry.n_axial = 400``.
"""

import math
import os
import typing
from collections import OrderedDict
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

from swe_elastography.exceptions import ConfigurationError
from swe_elastography.types import PhantomSpec, ScanGeometry

TRACKERS = ("ncc", "variational", "truth")


def parse_key_value_text(text: str, source: str = "<string>", error_cls=ConfigurationError) -> "OrderedDict[str, Tuple[str, int]]":
    """Parse ``key = value`` lines.

    Args:
        text: File contents
        source: Name used in error messages
        error_cls: Exception class raised on malformed lines

    Returns:
        Ordered mapping of key to (raw value, 1-based line number)

    Raises:
        error_cls: On a line without ``=``, an empty key or value, or a duplicate key
    """
    entries: "OrderedDict[str, Tuple[str, int]]" = OrderedDict()
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _located(error_cls, f"expected 'key = value', got {raw.strip()!r}", line_number, source)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise _located(error_cls, "empty key", line_number, source)
        if not value:
            raise _located(error_cls, f"empty value for {key!r}", line_number, source)
        if key in entries:
            raise _located(error_cls, f"duplicate key {key!r} (first on line {entries[key][1]})", line_number, source)
        entries[key] = (value, line_number)
    return entries


def _located(error_cls, message: str, line_number: int, source: str) -> Exception:
    try:
        return error_cls(message, line_number=line_number, source=source)
    except TypeError:
        return error_cls(f"{source}:{line_number}: {message}")


def _coerce(raw: str, annotation: Any, key: str) -> Any:
    """Convert a raw string to the type declared on a dataclass field."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union and type(None) in args:
        if raw.lower() in ("none", "null", ""):
            return None
        inner = [arg for arg in args if arg is not type(None)][0]
        return _coerce(raw, inner, key)
    try:
        if annotation is bool:
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if annotation is int:
            number = float(raw)
            if not number.is_integer():
                raise ValueError(f"not an integer: {raw!r}")
            return int(number)
        if annotation is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(f"not finite: {raw!r}")
            return value
        if annotation is str:
            return raw
        if origin in (tuple, Tuple):
            parts = [part.strip() for part in raw.replace("x", ",").split(",") if part.strip()]
            element = args[0] if args else float
            return tuple(_coerce(part, element, key) for part in parts)
        if origin in (list, List):
            element = args[0] if args else str
            return [_coerce(part.strip(), element, key) for part in raw.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigurationError(f"invalid value for {key}: {e}") from e
    raise ConfigurationError(f"unsupported configuration type for {key}: {annotation}")


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class PushConfig:
    """Acoustic radiation force push; focal point comes from the scan geometry."""

    focal_depth: float = 0.019
    lateral_center: float = 0.0125
    duration: float = 71e-6
    # lambda_push * f-number = (1540 / 7e6) * 2
    lateral_sigma: float = 4.4e-4
    # long push column: quasi-planar fronts across the evaluation depth band
    axial_sigma: float = 5e-3
    peak_body_force: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigurationError(f"push duration must be > 0, got {self.duration}")
        if not self.lateral_sigma > 0 or not self.axial_sigma > 0:
            raise ConfigurationError("push sigmas must be > 0")


@dataclass
class PulseSpec:
    """Transmit pulse and beam used by the RF renderer."""

    center_freq: float = 7e6
    fractional_bandwidth: float = 0.6
    lateral_sigma: float = 0.3e-3

    def __post_init__(self):
        if not 0 < self.fractional_bandwidth < 2:
            raise ConfigurationError(
                f"fractional_bandwidth must be in (0, 2), got {self.fractional_bandwidth}"
            )
        if not self.center_freq > 0 or not self.lateral_sigma > 0:
            raise ConfigurationError("center_freq and lateral_sigma must be > 0")

    @property
    def sigma_t(self) -> float:
        """Temporal standard deviation of the Gaussian envelope (s)."""
        return 1.0 / (2.0 * math.pi * self.center_freq * self.fractional_bandwidth / 2.355)


@dataclass
class SimulationConfig:
    """Finite-difference and RF simulation settings."""

    h: float = 0.15e-3
    dt: Optional[float] = None
    cfl_safety: float = 0.7
    sponge_cells: int = 15
    sponge_reflection: float = 1e-3
    target_peak_displacement: float = 2e-5
    # 30,000 / cm^3 over an assumed 0.5 mm elevational slice -> 1500 / cm^2
    scatterer_density: float = 1.5e7
    noise_snr_db: Optional[float] = None
    seed: int = field(default_factory=lambda: int(os.getenv("SWE_SEED", "0")))

    def __post_init__(self):
        if not 0 < self.h <= 0.2e-3:
            raise ConfigurationError(f"grid spacing h must be in (0, 0.2 mm], got {self.h}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigurationError(f"cfl_safety must be in (0, 1], got {self.cfl_safety}")
        if self.sponge_cells < 0:
            raise ConfigurationError("sponge_cells must be >= 0")
        if not 1e-5 <= self.target_peak_displacement <= 4e-5:
            raise ConfigurationError(
                f"target_peak_displacement must lie in [10, 40] um, got {self.target_peak_displacement}"
            )
        if not self.scatterer_density > 0:
            raise ConfigurationError("scatterer_density must be > 0")


@dataclass
class NccConfig:
    """Windowed normalised cross-correlation tracker."""

    # ~1.7 mm, about 8 wavelengths at 7 MHz
    window_len: int = 89
    window_hop: int = 20
    max_lag: int = 16
    workers: int = 1
    exact_match_tol: float = 1e-9

    def __post_init__(self):
        if self.window_len < 3 or self.window_len % 2 == 0:
            raise ConfigurationError(f"window_len must be odd and >= 3, got {self.window_len}")
        if self.window_hop < 1:
            raise ConfigurationError("window_hop must be >= 1")
        if self.max_lag < 1:
            raise ConfigurationError("max_lag must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def check_fits(self, n_axial: int) -> None:
        if self.window_len + 2 * self.max_lag > n_axial:
            raise ConfigurationError(
                f"window_len + 2*max_lag = {self.window_len + 2 * self.max_lag} exceeds n_axial {n_axial}"
            )


@dataclass
class VariationalConfig:
    """Variational (LNCC + curvature) tracker."""

    alpha: float = 0.02
    # (axial, lateral) pixels
    lncc_window: Tuple[int, int] = (9, 9)
    pyramid_levels: int = 3
    iters_per_level: int = 100
    step_size: float = 1.0
    charbonnier_eps: float = 1e-9
    warm_start: bool = True
    estimate_lateral: bool = False
    lateral_curvature: bool = True
    envelope_pyramid: bool = True
    gradient_sigma: float = 2.0
    armijo_c1: float = 1e-4
    min_step: float = 1e-4
    tolerance: float = 1e-9
    variance_floor: float = 1e-12

    def __post_init__(self):
        self.lncc_window = tuple(int(w) for w in self.lncc_window)
        if len(self.lncc_window) == 1:
            self.lncc_window = (self.lncc_window[0], self.lncc_window[0])
        if len(self.lncc_window) != 2 or any(w < 1 or w % 2 == 0 for w in self.lncc_window):
            raise ConfigurationError(f"lncc_window must be two odd sizes, got {self.lncc_window}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.pyramid_levels < 1:
            raise ConfigurationError("pyramid_levels must be >= 1")
        if self.iters_per_level < 0:
            raise ConfigurationError("iters_per_level must be >= 0")
        if not self.step_size > 0 or not self.min_step > 0:
            raise ConfigurationError("step sizes must be > 0")
        if not self.charbonnier_eps > 0:
            raise ConfigurationError("charbonnier_eps must be > 0")
        if self.gradient_sigma < 0:
            raise ConfigurationError("gradient_sigma must be >= 0")


@dataclass
class TofConfig:
    """Time-of-flight shear-wave-speed reconstruction."""

    max_lag_frames: int = 20
    axial_average_halfwidth: int = 8
    lane_distance: int = 1
    valid_speed_range: Tuple[float, float] = (0.5, 10.0)
    min_peak_corr: float = 0.6
    focal_exclusion_halfwidth: float = 1.5e-3
    median_kernel: int = 9
    one_sided_denominator: bool = False

    def __post_init__(self):
        self.valid_speed_range = tuple(float(v) for v in self.valid_speed_range)
        if self.max_lag_frames < 1:
            raise ConfigurationError("max_lag_frames must be >= 1")
        if self.lane_distance < 1:
            raise ConfigurationError("lane_distance must be >= 1")
        if self.axial_average_halfwidth < 0:
            raise ConfigurationError("axial_average_halfwidth must be >= 0")
        low, high = self.valid_speed_range
        if not 0 <= low < high:
            raise ConfigurationError(f"invalid valid_speed_range {self.valid_speed_range}")
        if self.median_kernel < 1 or self.median_kernel % 2 == 0:
            raise ConfigurationError(f"median_kernel must be odd, got {self.median_kernel}")

    def check_frames(self, n_frames: int) -> None:
        if self.max_lag_frames >= n_frames:
            raise ConfigurationError(
                f"max_lag_frames {self.max_lag_frames} must be < n_frames {n_frames}"
            )


@dataclass
class RoiConfig:
    """Evaluation regions."""

    depth_halfwidth: float = 4e-3
    inclusion_erosion: float = 1e-3

    def __post_init__(self):
        if not self.depth_halfwidth > 0:
            raise ConfigurationError("depth_halfwidth must be > 0")
        if self.inclusion_erosion < 0:
            raise ConfigurationError("inclusion_erosion must be >= 0")


@dataclass
class GenerateConfig:
    """Seeded random phantom population simulated alongside the listed phantoms."""

    count: int = 0
    youngs_range: Tuple[float, float] = (15e3, 30e3)
    inclusion_probability: float = 2.0 / 3.0

    def __post_init__(self):
        if self.count < 0:
            raise ConfigurationError(f"generate.count must be >= 0, got {self.count}")
        low, high = self.youngs_range
        if not PhantomSpec.BACKGROUND_RANGE[0] <= low <= high <= PhantomSpec.BACKGROUND_RANGE[1]:
            raise ConfigurationError(
                f"generate.youngs_range {self.youngs_range} must be ordered and within {PhantomSpec.BACKGROUND_RANGE} Pa"
            )
        if not 0.0 <= self.inclusion_probability <= 1.0:
            raise ConfigurationError("generate.inclusion_probability must be in [0, 1]")


# Dotted prefix -> attribute of ElastographyConfig
SECTIONS = OrderedDict([
    ("geometry", "geometry"),
    ("sim", "simulation"),
    ("push", "push"),
    ("pulse", "pulse"),
    ("ncc", "ncc"),
    ("variational", "variational"),
    ("tof", "tof"),
    ("roi", "roi"),
    ("generate", "generate"),
])


@dataclass
class ElastographyConfig:
    """Top-level run configuration."""

    phantoms: List[str] = field(default_factory=list)
    geometry: ScanGeometry = field(default_factory=ScanGeometry)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    push: PushConfig = field(default_factory=PushConfig)
    pulse: PulseSpec = field(default_factory=PulseSpec)
    ncc: NccConfig = field(default_factory=NccConfig)
    variational: VariationalConfig = field(default_factory=VariationalConfig)
    tof: TofConfig = field(default_factory=TofConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    trackers: List[str] = field(
        default_factory=lambda: [t.strip() for t in os.getenv("SWE_TRACKERS", "ncc").split(",") if t.strip()]
    )
    output_dir: str = field(default_factory=lambda: os.getenv("SWE_OUTPUT_DIR", "swe_output"))
    log_level: str = field(default_factory=lambda: os.getenv("SWE_LOG_LEVEL", "INFO"))

    def __post_init__(self):
        unknown = [t for t in self.trackers if t not in TRACKERS]
        if unknown:
            raise ConfigurationError(f"unknown tracker(s) {unknown}; expected one of {TRACKERS}")
        if not self.trackers:
            raise ConfigurationError("at least one tracker is required")
        self.tof.check_frames(self.geometry.n_frames)

    @property
    def seed(self) -> int:
        return self.simulation.seed

    def push_for_geometry(self) -> PushConfig:
        """Push config with its focal point taken from the scan geometry."""
        return replace(
            self.push,
            focal_depth=self.geometry.push_depth,
            lateral_center=self.geometry.push_lateral_position,
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to a flat dictionary of dotted keys."""
        result: Dict[str, Any] = OrderedDict()
        result["phantoms"] = list(self.phantoms)
        result["trackers"] = list(self.trackers)
        result["output_dir"] = self.output_dir
        result["log_level"] = self.log_level
        for prefix, attribute in SECTIONS.items():
            section = getattr(self, attribute)
            for f in fields(section):
                result[f"{prefix}.{f.name}"] = getattr(section, f.name)
        return result

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any], base_dir: str = "") -> "ElastographyConfig":
        """Create configuration from a dictionary of dotted keys and raw or typed values."""
        top: Dict[str, Any] = {}
        sections: Dict[str, Dict[str, Any]] = {attribute: {} for attribute in SECTIONS.values()}
        section_types = {f.name: f.type for f in fields(cls)}
        for key, value in config_dict.items():
            if key in ("phantom", "phantoms"):
                paths = value if isinstance(value, list) else [p.strip() for p in str(value).split(",") if p.strip()]
                top["phantoms"] = [p if os.path.isabs(p) or not base_dir else os.path.join(base_dir, p) for p in paths]
            elif key in ("tracker", "trackers"):
                top["trackers"] = value if isinstance(value, list) else _coerce(str(value), List[str], key)
            elif key in ("output_dir", "log_level"):
                top[key] = str(value)
            elif "." in key:
                prefix, name = key.split(".", 1)
                attribute = cls._resolve_section(prefix, name, key)
                section_cls = section_types[attribute]
                field_types = {f.name: f.type for f in fields(section_cls)}
                sections[attribute][name] = (
                    _coerce(value, field_types[name], key) if isinstance(value, str) else value
                )
            else:
                raise ConfigurationError(f"unknown configuration key {key!r}")
        built = {
            attribute: section_types[attribute](**values) for attribute, values in sections.items()
        }
        return cls(**top, **built)

    @staticmethod
    def _resolve_section(prefix: str, name: str, key: str) -> str:
        if prefix == "tracker":
            # tracker.<key> is shorthand for whichever tracker owns the key
            for attribute, section_cls in (("variational", VariationalConfig), ("ncc", NccConfig)):
                if name in {f.name for f in fields(section_cls)}:
                    return attribute
            raise ConfigurationError(f"unknown tracker setting {key!r}")
        if prefix not in SECTIONS:
            raise ConfigurationError(f"unknown configuration section {prefix!r} in {key!r}")
        attribute = SECTIONS[prefix]
        section_cls = {f.name: f.type for f in fields(ElastographyConfig)}[attribute]
        if name not in {f.name for f in fields(section_cls)}:
            raise ConfigurationError(f"unknown key {key!r} in section {prefix!r}")
        return attribute

    @classmethod
    def from_file(cls, config_path: str) -> "ElastographyConfig":
        """Load configuration from a ``key = value`` file."""
        if not os.path.exists(config_path):
            raise FileNotFoundError(f"Configuration file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as f:
            entries = parse_key_value_text(f.read(), source=config_path)
        raw = OrderedDict((key, value) for key, (value, _) in entries.items())
        try:
            return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(config_path)))
        except ConfigurationError as e:
            for key, (_, line_number) in entries.items():
                if repr(key) in str(e) or f"{key}:" in str(e):
                    raise ConfigurationError(f"{config_path}:{line_number}: {e}") from e
            raise ConfigurationError(f"{config_path}: {e}") from e

    def save_to_file(self, config_path: str) -> None:
        """Save configuration in the ``key = value`` grammar."""
        os.makedirs(os.path.dirname(config_path) or ".", exist_ok=True)
        with open(config_path, "w", encoding="utf-8") as f:
            for key, value in self.to_dict().items():
                if value is None or (isinstance(value, list) and not value):
                    continue
                f.write(f"{key} = {_format(value)}\n")


def get_default_config() -> ElastographyConfig:
    """Get default configuration instance."""
    return ElastographyConfig()
