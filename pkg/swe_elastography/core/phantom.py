"""Phantom specification files and random phantom populations."""

import logging
import os
from typing import Dict, List, Optional, Tuple

import numpy as np

from swe_elastography.config import parse_key_value_text
from swe_elastography.exceptions import PhantomSpecError
from swe_elastography.types import InclusionSpec, PhantomSpec

logger = logging.getLogger(__name__)

OPTIONAL_KEYS = ("extent_axial", "extent_lateral", "poissons_ratio", "density", "attenuation")
INCLUSION_KEYS = (
    "inclusion_center_axial",
    "inclusion_center_lateral",
    "inclusion_radius",
    "inclusion_youngs",
)
KNOWN_KEYS = ("background_youngs",) + OPTIONAL_KEYS + INCLUSION_KEYS


def parse_phantom_spec(text: str, source: str = "<string>") -> PhantomSpec:
    """Parse phantom ``key = value`` text.

    Args:
        text: Spec contents
        source: Name used in located error messages

    Returns:
        Validated PhantomSpec; without inclusion keys the phantom is homogeneous

    Raises:
        PhantomSpecError: Located error for malformed lines, unknown or missing keys,
            non-numeric values, partial inclusion blocks and out-of-range values
    """
    entries = parse_key_value_text(text, source=source, error_cls=PhantomSpecError)

    values: Dict[str, float] = {}
    for key, (raw, line_number) in entries.items():
        if key not in KNOWN_KEYS:
            raise PhantomSpecError(f"unknown key {key!r}", line_number, source)
        try:
            values[key] = float(raw)
        except ValueError:
            raise PhantomSpecError(f"{key} must be a number, got {raw!r}", line_number, source)
        if not np.isfinite(values[key]):
            raise PhantomSpecError(f"{key} must be finite", line_number, source)

    if "background_youngs" not in values:
        raise PhantomSpecError("missing mandatory key 'background_youngs'", source=source)

    present = [key for key in INCLUSION_KEYS if key in values]
    inclusion: Optional[InclusionSpec] = None
    if present and len(present) != len(INCLUSION_KEYS):
        missing = [key for key in INCLUSION_KEYS if key not in values]
        raise PhantomSpecError(
            f"inclusion keys are all-or-none; missing {missing}",
            entries[present[0]][1],
            source,
        )
    if present:
        inclusion = InclusionSpec(
            center_axial=values["inclusion_center_axial"],
            center_lateral=values["inclusion_center_lateral"],
            radius=values["inclusion_radius"],
            youngs=values["inclusion_youngs"],
        )

    kwargs = {key: values[key] for key in OPTIONAL_KEYS if key in values}
    try:
        return PhantomSpec(background_youngs=values["background_youngs"], inclusion=inclusion, **kwargs)
    except PhantomSpecError as e:
        # Range messages start with the offending key.
        message = str(e)
        key = message.split(" ", 1)[0]
        if key == "inclusion":
            key = "inclusion_youngs"
        line_number = entries[key][1] if key in entries else None
        raise PhantomSpecError(message, line_number, source) from e


def load_phantom_spec(path: str) -> PhantomSpec:
    """Load and validate a phantom spec file.

    Raises:
        FileNotFoundError: If the file does not exist
        PhantomSpecError: If the file is malformed or out of range
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Phantom spec not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        spec = parse_phantom_spec(f.read(), source=path)
    kind = "homogeneous" if spec.is_homogeneous else "inclusion"
    logger.info(f"Loaded {kind} phantom from {path} (E_b = {spec.background_youngs:.0f} Pa)")
    return spec


def write_phantom_spec(spec: PhantomSpec, path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(spec.to_text())


def generate_phantom_specs(
    count: int,
    seed: int,
    inclusion_probability: float = 2.0 / 3.0,
    margin: float = 2e-3,
    background_range: Optional[Tuple[float, float]] = None,
) -> List[PhantomSpec]:
    """Draw random in-range phantoms.

    Background moduli, inclusion radii and stiffness ratios are uniform over
    the ranges declared on PhantomSpec; inclusion disks are placed fully
    inside the phantom, ``margin`` away from every edge.

    Args:
        count: Number of phantoms
        seed: Generator seed
        inclusion_probability: Chance that a phantom carries an inclusion
        margin: Minimum distance between the inclusion disk and the phantom edge (m)
        background_range: Background modulus range (Pa); PhantomSpec.BACKGROUND_RANGE when omitted

    Returns:
        List of validated PhantomSpec
    """
    if count < 0:
        raise PhantomSpecError(f"count must be >= 0, got {count}")
    low, high = background_range or PhantomSpec.BACKGROUND_RANGE
    if not PhantomSpec.BACKGROUND_RANGE[0] <= low <= high <= PhantomSpec.BACKGROUND_RANGE[1]:
        raise PhantomSpecError(f"background range {(low, high)} outside {PhantomSpec.BACKGROUND_RANGE} Pa")
    rng = np.random.default_rng(seed)
    template = PhantomSpec(background_youngs=PhantomSpec.BACKGROUND_RANGE[0])
    specs: List[PhantomSpec] = []
    for _ in range(count):
        background = float(rng.uniform(low, high))
        inclusion = None
        if rng.random() < inclusion_probability:
            radius = float(rng.uniform(*PhantomSpec.RADIUS_RANGE))
            ratio = float(rng.uniform(*PhantomSpec.STIFFNESS_RATIO_RANGE))
            inclusion = InclusionSpec(
                center_axial=float(rng.uniform(radius + margin, template.extent_axial - radius - margin)),
                center_lateral=float(rng.uniform(radius + margin, template.extent_lateral - radius - margin)),
                radius=radius,
                youngs=background * ratio,
            )
        specs.append(PhantomSpec(background_youngs=background, inclusion=inclusion))
    logger.info(f"Generated {count} phantom specs from seed {seed}")
    return specs
