"""Shear-wave propagation with a 2D explicit finite-difference solver.

The solver integrates the scalar shear-wave equation for the axial
displacement u on a regular grid,

    rho * u_tt = div(mu * grad u) - rho * damping * u_t + f,

with a staggered leapfrog scheme (velocity at half steps), harmonic
face-averaged shear modulus, a graded damping sponge along every edge and
u = 0 on the outermost nodes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import map_coordinates
from tqdm import tqdm

from swe_elastography.config import PushConfig, SimulationConfig
from swe_elastography.exceptions import (
    CalibrationError,
    CflViolationError,
    SimulationError,
    SweElastographyError,
)
from swe_elastography.types import (
    DisplacementStack,
    MaterialField,
    PhantomSpec,
    ScanGeometry,
    SimulationResult,
    WaveState,
)

logger = logging.getLogger(__name__)

MAX_NODE_SPACING = 0.2e-3


@dataclass(frozen=True)
class PushForce:
    """Separable Gaussian body force switched on for ``0 <= t <= duration``."""

    push: PushConfig
    profile: np.ndarray

    def evaluate(self, t: float) -> np.ndarray:
        """Force density on the grid at time t (N/m^3)."""
        if 0.0 <= t <= self.push.duration:
            return self.profile
        return np.zeros_like(self.profile)

    def value_at(self, lateral: float, axial: float, t: float) -> float:
        """Force density at an arbitrary phantom-frame point."""
        if not 0.0 <= t <= self.push.duration:
            return 0.0
        push = self.push
        exponent = (
            (lateral - push.lateral_center) ** 2 / (2.0 * push.lateral_sigma ** 2)
            + (axial - push.focal_depth) ** 2 / (2.0 * push.axial_sigma ** 2)
        )
        return float(push.peak_body_force * math.exp(-exponent))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.profile)


def elastic_operator(u: np.ndarray, field: MaterialField) -> np.ndarray:
    """div(mu grad u) by flux differences; zero on the outermost nodes."""
    flux_lateral = field.mu_face_lateral * (u[1:, :] - u[:-1, :])
    flux_axial = field.mu_face_axial * (u[:, 1:] - u[:, :-1])
    result = np.zeros_like(u)
    result[1:-1, :] += flux_lateral[1:, :] - flux_lateral[:-1, :]
    result[:, 1:-1] += flux_axial[:, 1:] - flux_axial[:, :-1]
    result[0, :] = result[-1, :] = 0.0
    result[:, 0] = result[:, -1] = 0.0
    return result / field.h ** 2


def wave_energy(u: np.ndarray, v: np.ndarray, field: MaterialField, dt: float) -> float:
    """Discrete leapfrog energy per unit thickness for a state (u at t, v at t - dt/2).

    Kinetic energy of the half-step velocity pairs with the strain cross term
    between u(t - dt) = u - dt v and u(t); the sum is exactly conserved by
    ``step_wave`` when damping and force vanish.
    """
    previous = u - dt * v
    kinetic = 0.5 * field.density * float(np.sum(v ** 2)) * field.h ** 2
    strain = 0.5 * (
        float(np.sum(field.mu_face_lateral * (u[1:, :] - u[:-1, :]) * (previous[1:, :] - previous[:-1, :])))
        + float(np.sum(field.mu_face_axial * (u[:, 1:] - u[:, :-1]) * (previous[:, 1:] - previous[:, :-1])))
    )
    return kinetic + strain


class ShearWaveSimulator:
    """Rasterises phantoms and propagates the push-induced shear wave."""

    DEFAULT_SPONGE_CELLS = 15

    def __init__(self, config: Optional[SimulationConfig] = None, show_progress: bool = False):
        """Initialize ShearWaveSimulator.

        Args:
            config: Simulation configuration (defaults when omitted)
            show_progress: Show a tqdm bar over frames
        """
        self.config = config or SimulationConfig()
        self.show_progress = show_progress

    def build_material_field(
        self,
        spec: PhantomSpec,
        h: Optional[float] = None,
        sponge_cells: Optional[int] = None,
    ) -> MaterialField:
        """Rasterise a phantom onto the finite-difference grid.

        Nodes sit at multiples of h from the phantom origin; ``sponge_cells``
        extra nodes pad every edge.

        Args:
            spec: Phantom description
            h: Node spacing (m), at most 0.2 mm
            sponge_cells: Sponge thickness in cells

        Returns:
            MaterialField covering phantom and sponge

        Raises:
            SimulationError: If h is too coarse or the inclusion centre lies outside the phantom
        """
        h = self.config.h if h is None else h
        sponge = self.config.sponge_cells if sponge_cells is None else sponge_cells
        if not 0 < h <= MAX_NODE_SPACING:
            raise SimulationError(f"node spacing {h} m is outside (0, {MAX_NODE_SPACING}] m")
        if sponge < 0:
            raise SimulationError(f"sponge_cells must be >= 0, got {sponge}")
        if spec.inclusion is not None:
            inc = spec.inclusion
            if not (0 <= inc.center_axial <= spec.extent_axial and 0 <= inc.center_lateral <= spec.extent_lateral):
                raise SimulationError(
                    f"inclusion centre ({inc.center_axial}, {inc.center_lateral}) m lies outside the phantom"
                )

        n_lateral = int(round(spec.extent_lateral / h)) + 1
        n_axial = int(round(spec.extent_axial / h)) + 1
        lateral = (np.arange(n_lateral + 2 * sponge) - sponge) * h
        axial = (np.arange(n_axial + 2 * sponge) - sponge) * h

        youngs = spec.youngs_at(axial[None, :], lateral[:, None])
        shear_modulus = youngs / (2.0 * (1.0 + spec.poissons_ratio))
        shear_speed = np.sqrt(shear_modulus / spec.density)
        damping = 2.0 * spec.attenuation * shear_speed

        if sponge > 0:
            depth_lateral = self._sponge_depth(lateral.size, sponge)[:, None]
            depth_axial = self._sponge_depth(axial.size, sponge)[None, :]
            width = sponge * h
            gamma_max = math.log(1.0 / self.config.sponge_reflection) * 3.0 * float(shear_speed.max()) / width
            damping = damping + gamma_max * ((depth_lateral / sponge) ** 2 + (depth_axial / sponge) ** 2)

        field = MaterialField(
            h=h,
            youngs=youngs,
            shear_modulus=shear_modulus,
            density=spec.density,
            damping=damping,
            shear_speed=shear_speed,
            lateral=lateral,
            axial=axial,
            sponge_cells=sponge,
        )
        logger.debug(
            f"Material field {field.shape} at h={h:.2e} m, c in "
            f"[{shear_speed.min():.3f}, {shear_speed.max():.3f}] m/s"
        )
        return field

    @staticmethod
    def _sponge_depth(n: int, sponge: int) -> np.ndarray:
        """Cells into the sponge for each node along one axis (0 in the interior)."""
        index = np.arange(n)
        return np.maximum(np.maximum(sponge - index, index - (n - 1 - sponge)), 0).astype(float)

    def build_push_force(self, push: PushConfig, field: MaterialField) -> PushForce:
        """Sample the push force profile on the grid.

        Raises:
            SimulationError: If the focal point lies in the sponge
        """
        s = field.sponge_cells
        lateral_inner = field.lateral[s:field.lateral.size - s]
        axial_inner = field.axial[s:field.axial.size - s]
        if not (
            lateral_inner[0] <= push.lateral_center <= lateral_inner[-1]
            and axial_inner[0] <= push.focal_depth <= axial_inner[-1]
        ):
            raise SimulationError(
                f"push focal point ({push.focal_depth}, {push.lateral_center}) m lies in the sponge region"
            )
        exponent = (
            (field.lateral[:, None] - push.lateral_center) ** 2 / (2.0 * push.lateral_sigma ** 2)
            + (field.axial[None, :] - push.focal_depth) ** 2 / (2.0 * push.axial_sigma ** 2)
        )
        profile = push.peak_body_force * np.exp(-exponent)
        return PushForce(push=push, profile=profile)

    @staticmethod
    def cfl_limit(field: MaterialField) -> float:
        """Largest stable time step h / (c_max * sqrt(2))."""
        return field.h / (field.c_max * math.sqrt(2.0))

    def choose_time_step(
        self, field: MaterialField, prf: float, dt: Optional[float] = None
    ) -> Tuple[float, int]:
        """Time step dividing the frame interval exactly.

        Args:
            field: Material field (sets the CFL limit)
            prf: Frame rate (Hz)
            dt: Requested step; ``cfl_safety`` times the CFL limit when omitted

        Returns:
            (dt, steps per frame) with dt no larger than requested

        Raises:
            CflViolationError: If the requested step breaks the CFL limit
        """
        limit = self.cfl_limit(field)
        requested = self.config.cfl_safety * limit if dt is None else dt
        if requested > limit * (1.0 + 1e-12):
            raise CflViolationError(
                f"dt={requested:.4e} s exceeds CFL limit {limit:.4e} s (h={field.h}, c_max={field.c_max:.4f})"
            )
        interval = 1.0 / prf
        steps = max(1, int(math.ceil(interval / requested - 1e-9)))
        return interval / steps, steps

    def step_wave(
        self,
        state: WaveState,
        field: MaterialField,
        force: Optional[PushForce],
        dt: float,
    ) -> WaveState:
        """Advance one leapfrog step.

        Args:
            state: u at t and v at t - dt/2
            field: Material field
            force: Push force, or None for free propagation
            dt: Time step (s)

        Returns:
            New state with u at t + dt and v at t + dt/2

        Raises:
            CflViolationError: If dt breaks the CFL limit
            SimulationError: If the state becomes non-finite
        """
        limit = self.cfl_limit(field)
        if dt > limit * (1.0 + 1e-12):
            raise CflViolationError(
                f"dt={dt:.4e} s exceeds CFL limit {limit:.4e} s (h={field.h}, c_max={field.c_max:.4f})"
            )
        acceleration = elastic_operator(state.u, field)
        if force is not None:
            acceleration = acceleration + force.evaluate(state.t)
        g = 0.5 * dt * field.damping
        v = ((1.0 - g) * state.v + (dt / field.density) * acceleration) / (1.0 + g)
        v[0, :] = v[-1, :] = 0.0
        v[:, 0] = v[:, -1] = 0.0
        u = state.u + dt * v
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise SimulationError(
                f"non-finite wave state at t={state.t + dt:.6e} s "
                f"(max|u| before step {np.nanmax(np.abs(state.u)):.3e} m)"
            )
        return WaveState(u=u, v=v, t=state.t + dt)

    def propagate(
        self,
        state: WaveState,
        field: MaterialField,
        force: Optional[PushForce],
        dt: float,
        n_steps: int,
    ) -> WaveState:
        for _ in range(n_steps):
            state = self.step_wave(state, field, force, dt)
        return state

    def simulate(
        self,
        spec: PhantomSpec,
        push: PushConfig,
        geometry: ScanGeometry,
        h: Optional[float] = None,
        dt: Optional[float] = None,
        calibrate: bool = True,
    ) -> SimulationResult:
        """Simulate the ground-truth displacement movie.

        The field is sampled every 1/prf onto the scan grid with bilinear
        interpolation; frame 0 precedes the push and is zero. With
        ``calibrate`` the movie is rescaled once so its peak equals
        ``target_peak_displacement``.

        Returns:
            SimulationResult with the displacement stack and calibration factor

        Raises:
            SimulationError: On solver failure (CflViolationError, CalibrationError included)
        """
        try:
            field = self.build_material_field(spec, h)
            force = self.build_push_force(push, field)
            dt, steps_per_frame = self.choose_time_step(field, geometry.prf, dt)
            logger.info(
                f"Simulating {geometry.n_frames} frames on a {field.shape} grid, "
                f"dt={dt:.3e} s ({steps_per_frame} steps/frame)"
            )

            coordinates = self._scan_coordinates(field, geometry)
            frames = np.zeros(geometry.shape)
            if not force.is_zero:
                state = WaveState.zeros(field.shape)
                frame_indices = range(1, geometry.n_frames)
                if self.show_progress:
                    frame_indices = tqdm(frame_indices, desc="wave", unit="frame")
                for k in frame_indices:
                    state = self.propagate(state, field, force, dt, steps_per_frame)
                    frames[k] = map_coordinates(state.u, coordinates, order=1, mode="nearest")

            factor = 1.0
            raw_peak = float(np.max(np.abs(frames)))
            if calibrate and not force.is_zero:
                if raw_peak == 0.0:
                    raise CalibrationError("push produced no displacement on the scan grid")
                factor = self.config.target_peak_displacement / raw_peak
                frames *= factor
                logger.info(f"Calibrated push amplitude by {factor:.4e} (raw peak {raw_peak:.3e} m)")

            displacement = DisplacementStack(geometry=geometry, axial=frames)
            return SimulationResult(
                displacement=displacement,
                calibration_factor=factor,
                h=field.h,
                dt=dt,
                peak_displacement=displacement.peak(),
                phantom_digest=spec.digest(),
                n_steps=(geometry.n_frames - 1) * steps_per_frame,
            )
        except SimulationError:
            raise
        except SweElastographyError as e:
            raise SimulationError(f"Displacement simulation failed: {str(e)}") from e

    def simulate_displacements(
        self,
        spec: PhantomSpec,
        push: PushConfig,
        geometry: ScanGeometry,
        h: Optional[float] = None,
        dt: Optional[float] = None,
    ) -> DisplacementStack:
        """Calibrated ground-truth DisplacementStack (see ``simulate``)."""
        return self.simulate(spec, push, geometry, h, dt).displacement

    @staticmethod
    def _scan_coordinates(field: MaterialField, geometry: ScanGeometry) -> np.ndarray:
        """Fractional grid indices of every scan sample, shape (2, n_lateral, n_axial)."""
        s = field.sponge_cells
        lateral = geometry.lateral_positions() / field.h + s
        axial = geometry.axial_positions() / field.h + s
        grid_lateral, grid_axial = np.meshgrid(lateral, axial, indexing="ij")
        return np.stack([grid_lateral, grid_axial])
