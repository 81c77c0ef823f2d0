"""End-to-end elastography pipeline: simulate, track, reconstruct, evaluate."""

import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from swe_elastography.config import ElastographyConfig
from swe_elastography.core import (
    MetricsEvaluator,
    MetricsRow,
    NccTracker,
    Reconstruction,
    RfSimulator,
    RunManifest,
    ShearWaveSimulator,
    SwsReconstructor,
    VariationalTracker,
    append_results,
    export_elasticity_map,
    export_mask_csv,
    generate_phantom_specs,
    load_phantom_spec,
    read_map_csv,
    read_stack,
    read_stack_header,
    results_frame,
    truth_elasticity_map,
    write_loss_trace,
    write_phantom_spec,
    write_stack,
    write_summary,
)
from swe_elastography.core.manifest import MANIFEST_NAME
from swe_elastography.exceptions import ConfigurationError, ExportError, SweElastographyError
from swe_elastography.types import (
    DisplacementStack,
    ElasticityMap,
    FrameStack,
    PhantomSpec,
    ScanGeometry,
    TrackingResult,
)

logger = logging.getLogger(__name__)

# Artifact file names inside a stage directory.
TRUTH_STACK = "truth_displacement.swf"
RF_STACK = "rf.swf"
PHANTOM_ECHO = "phantom.txt"
TRUTH_MAP = "truth_youngs.csv"
DISPLACEMENT_STACK = "displacement.swf"
LOSS_TRACE = "loss_trace.csv"
SWS_MAP = "sws.csv"
YOUNGS_RAW = "youngs_raw.csv"
YOUNGS_MAP = "youngs.csv"
YOUNGS_IMAGE = "youngs.pgm"
VALID_MASK = "valid_mask.csv"
EXCLUSION_MASK = "exclusion_mask.csv"
RESULTS_TABLE = "results.csv"
SUMMARY_TABLE = "summary.csv"
GENERATED_PHANTOMS = "phantoms"


def phantom_id_for(path: str) -> str:
    """Phantom identifier: the spec file name without extension."""
    return os.path.splitext(os.path.basename(path))[0]


@dataclass
class SimulationArtifacts:
    """In-memory outputs of the simulate stage and where they were written."""

    phantom_id: str
    spec: PhantomSpec
    truth: DisplacementStack
    rf: FrameStack
    truth_map: ElasticityMap
    directory: str
    paths: Dict[str, str] = field(default_factory=dict)


class ElastographyPipeline:
    """Orchestrates the simulator, trackers, reconstructor and evaluator."""

    def __init__(self, config: Optional[ElastographyConfig] = None, show_progress: bool = False):
        """Initialize the pipeline.

        Args:
            config: Run configuration. If None, uses default config.
            show_progress: Show tqdm bars in the long loops
        """
        self.config = config or ElastographyConfig()
        cfg = self.config

        self.wave_simulator = ShearWaveSimulator(cfg.simulation, show_progress)
        self.rf_simulator = RfSimulator(cfg.pulse, cfg.simulation, show_progress)
        self.ncc_tracker = NccTracker(cfg.ncc, show_progress)
        self.variational_tracker = VariationalTracker(cfg.variational, show_progress)
        self.evaluator = MetricsEvaluator(cfg.roi)
        self.current_stage = ""

    def reconstructor(self, density: float = 1000.0) -> SwsReconstructor:
        return SwsReconstructor(self.config.tof, density)

    def geometry_for_stack(self, path: str) -> ScanGeometry:
        """Configured geometry resized to the dims in a stack file header."""
        n_frames, n_lateral, n_axial = read_stack_header(path)
        return self.config.geometry.with_dims(n_frames, n_lateral, n_axial)

    def new_manifest(self, command: str) -> RunManifest:
        return RunManifest(
            command=command,
            config=self.config.to_dict(),
            seeds={"simulation": self.config.seed},
        )

    def phantom_paths(self, out_dir: Optional[str] = None) -> List[str]:
        """Configured phantom spec files followed by the generated population.

        Generated specs are drawn from the simulation seed and written to
        ``<out_dir>/phantoms/generated_<index>.txt``.

        Raises:
            ConfigurationError: If no phantom is configured or generated
        """
        cfg = self.config
        paths = list(cfg.phantoms)
        if cfg.generate.count:
            spec_dir = os.path.join(out_dir or cfg.output_dir, GENERATED_PHANTOMS)
            specs = generate_phantom_specs(
                cfg.generate.count, cfg.seed,
                inclusion_probability=cfg.generate.inclusion_probability,
                background_range=cfg.generate.youngs_range,
            )
            for index, spec in enumerate(specs):
                path = os.path.join(spec_dir, f"generated_{index:03d}.txt")
                write_phantom_spec(spec, path)
                paths.append(path)
            logger.info(f"Wrote {len(specs)} generated phantom spec(s) to {spec_dir}")
        if not paths:
            raise ConfigurationError("no phantom spec configured (set 'phantom = <path>' or 'generate.count')")
        return paths

    # Stages

    def simulate(self, spec: PhantomSpec, out_dir: str, phantom_id: str = "phantom") -> SimulationArtifacts:
        """Simulate truth displacements and RF frames for one phantom and write them.

        Writes the truth stack, the RF stack, the phantom echo and the truth
        Young's modulus map into ``out_dir``.

        Raises:
            SimulationError: On solver or rendering failure
        """
        cfg = self.config
        os.makedirs(out_dir, exist_ok=True)
        geometry = cfg.geometry
        result = self.wave_simulator.simulate(spec, cfg.push_for_geometry(), geometry, dt=cfg.simulation.dt)
        rf = self.rf_simulator.simulate_rf_sequence(spec, result.displacement, geometry, seed=cfg.seed)
        truth_map = truth_elasticity_map(spec, geometry)

        paths = {
            "truth": os.path.join(out_dir, TRUTH_STACK),
            "rf": os.path.join(out_dir, RF_STACK),
            "phantom": os.path.join(out_dir, PHANTOM_ECHO),
            "truth_map": os.path.join(out_dir, TRUTH_MAP),
        }
        write_stack(result.displacement, paths["truth"])
        write_stack(rf, paths["rf"])
        write_phantom_spec(spec, paths["phantom"])
        export_elasticity_map(truth_map, paths["truth_map"])

        manifest = self.new_manifest("simulate")
        manifest.parameters.update({
            "phantom_id": phantom_id,
            "phantom_digest": result.phantom_digest,
            "calibration_factor": result.calibration_factor,
            "peak_displacement": result.peak_displacement,
            "h": result.h,
            "dt": result.dt,
            "n_steps": result.n_steps,
        })
        for name, path in paths.items():
            manifest.add_artifact(name, path)
        manifest.complete_stage("simulate")
        manifest.mark_ok()
        manifest.save_to_file(os.path.join(out_dir, MANIFEST_NAME))
        logger.info(f"Simulated phantom {phantom_id} into {out_dir}")
        return SimulationArtifacts(
            phantom_id=phantom_id, spec=spec, truth=result.displacement, rf=rf,
            truth_map=truth_map, directory=out_dir, paths=paths,
        )

    def track(
        self,
        rf: FrameStack,
        tracker: str,
        out_dir: str,
        truth: Optional[DisplacementStack] = None,
    ) -> TrackingResult:
        """Track an RF sequence and write the displacement stack (and loss trace).

        Args:
            rf: RF frame sequence
            tracker: ``ncc``, ``variational`` or ``truth``
            out_dir: Output directory
            truth: Ground-truth displacements, required by the ``truth`` tracker

        Raises:
            ConfigurationError: On an unknown tracker or a truth tracker without truth
            TrackingError: If tracking fails
        """
        os.makedirs(out_dir, exist_ok=True)
        if tracker == "ncc":
            result = self.ncc_tracker.track(rf)
        elif tracker == "variational":
            result = self.variational_tracker.track(rf)
        elif tracker == "truth":
            if truth is None:
                raise ConfigurationError("the truth tracker needs the simulated displacements")
            result = TrackingResult(displacement=truth, tracker="truth")
        else:
            raise ConfigurationError(f"unknown tracker {tracker!r}")

        write_stack(result.displacement, os.path.join(out_dir, DISPLACEMENT_STACK))
        if result.loss_trace:
            write_loss_trace(result.loss_trace, os.path.join(out_dir, LOSS_TRACE))
        logger.info(f"Tracked {rf.n_frames} frames with {tracker} into {out_dir}")
        return result

    def reconstruct(
        self,
        displacement: DisplacementStack,
        out_dir: str,
        density: float = 1000.0,
    ) -> Reconstruction:
        """Build and export the SWS map, raw and filtered modulus maps and masks.

        Raises:
            ReconstructionError: If the reconstruction is degenerate
        """
        os.makedirs(out_dir, exist_ok=True)
        reconstruction = self.reconstructor(density).reconstruct(displacement)
        sws = reconstruction.sws
        sws_map = ElasticityMap(values=sws.speed, valid=sws.valid, geometry=sws.geometry)
        export_elasticity_map(sws_map, os.path.join(out_dir, SWS_MAP))
        export_elasticity_map(reconstruction.youngs_raw, os.path.join(out_dir, YOUNGS_RAW))
        export_elasticity_map(reconstruction.youngs, os.path.join(out_dir, YOUNGS_MAP))
        export_elasticity_map(reconstruction.youngs, os.path.join(out_dir, YOUNGS_IMAGE), fmt="pgm")
        export_mask_csv(reconstruction.youngs.valid, os.path.join(out_dir, VALID_MASK))
        export_mask_csv(reconstruction.exclusion, os.path.join(out_dir, EXCLUSION_MASK))
        logger.info(
            f"Reconstructed maps into {out_dir}: "
            f"{reconstruction.valid_fraction():.1%} valid outside the focal exclusion"
        )
        return reconstruction

    def evaluate(
        self,
        pred: ElasticityMap,
        truth_map: ElasticityMap,
        spec: PhantomSpec,
        exclusion: np.ndarray,
        phantom_id: str,
        tracker: str,
        geometry: Optional[ScanGeometry] = None,
    ) -> MetricsRow:
        geometry = geometry or pred.geometry or self.config.geometry
        return self.evaluator.evaluate(pred, truth_map, spec, geometry, exclusion, phantom_id, tracker)

    # Whole runs

    def run_phantom(self, spec: PhantomSpec, phantom_id: str, out_dir: str, manifest: RunManifest) -> List[MetricsRow]:
        """Simulate one phantom once and run every configured tracker on it."""
        self.current_stage = f"{phantom_id}/simulate"
        artifacts = self.simulate(spec, out_dir, phantom_id)
        manifest.complete_stage(self.current_stage)
        for name, path in artifacts.paths.items():
            manifest.add_artifact(f"{phantom_id}/{name}", path)

        rows: List[MetricsRow] = []
        for tracker in self.config.trackers:
            tracker_dir = os.path.join(out_dir, tracker)
            prefix = f"{phantom_id}/{tracker}"

            self.current_stage = f"{prefix}/track"
            result = self.track(artifacts.rf, tracker, tracker_dir, truth=artifacts.truth)
            manifest.complete_stage(self.current_stage)
            if result.underflow_frames:
                manifest.parameters[f"{prefix}/underflow_frames"] = list(result.underflow_frames)

            self.current_stage = f"{prefix}/reconstruct"
            reconstruction = self.reconstruct(result.displacement, tracker_dir, spec.density)
            manifest.complete_stage(self.current_stage)
            manifest.add_artifact(f"{prefix}/youngs", os.path.join(tracker_dir, YOUNGS_MAP))

            self.current_stage = f"{prefix}/evaluate"
            rows.append(self.evaluate(
                reconstruction.youngs, artifacts.truth_map, spec, reconstruction.exclusion,
                phantom_id, tracker, geometry=artifacts.truth.geometry,
            ))
            manifest.complete_stage(self.current_stage)
        return rows

    def run(self, out_dir: Optional[str] = None) -> List[MetricsRow]:
        """Run every stage for every configured or generated phantom.

        Stops at the first failing stage, whatever it raised; artifacts
        written so far are kept and the top-level manifest is marked FAILED.
        The results table gets a per-tracker summary written next to it.

        Returns:
            One MetricsRow per (phantom, tracker)

        Raises:
            ConfigurationError: If no phantom is configured or generated
            SweElastographyError: Whatever the failing stage raised
        """
        cfg = self.config
        out_dir = out_dir or cfg.output_dir
        if not cfg.phantoms and not cfg.generate.count:
            raise ConfigurationError("no phantom spec configured (set 'phantom = <path>' or 'generate.count')")
        os.makedirs(out_dir, exist_ok=True)
        manifest = self.new_manifest("pipeline")
        manifest_path = os.path.join(out_dir, MANIFEST_NAME)
        results_path = os.path.join(out_dir, RESULTS_TABLE)
        summary_path = os.path.join(out_dir, SUMMARY_TABLE)

        rows: List[MetricsRow] = []
        try:
            self.current_stage = "generate"
            paths = self.phantom_paths(out_dir)
            for path in paths:
                phantom_id = phantom_id_for(path)
                self.current_stage = f"{phantom_id}/load"
                spec = load_phantom_spec(path)
                phantom_dir = out_dir if len(paths) == 1 else os.path.join(out_dir, phantom_id)
                rows.extend(self.run_phantom(spec, phantom_id, phantom_dir, manifest))
            self.current_stage = "results"
            append_results(rows, results_path, overwrite=True)
            write_summary(results_frame(rows), summary_path)
            manifest.add_artifact("results", results_path)
            manifest.add_artifact("summary", summary_path)
        except BaseException as e:
            manifest.mark_failed(self.current_stage, e)
            manifest.save_to_file(manifest_path)
            raise
        manifest.parameters["rows"] = [asdict(row) for row in rows]
        manifest.mark_ok()
        manifest.save_to_file(manifest_path)
        logger.info(f"Pipeline finished: {len(rows)} result row(s) in {results_path}")
        return rows

    # Stage helpers used by the command-line front-end

    def load_rf(self, path: str) -> FrameStack:
        return read_stack(path, kind="frames", geometry=self.geometry_for_stack(path))

    def load_displacement(self, path: str) -> DisplacementStack:
        return read_stack(path, kind="displacement", geometry=self.geometry_for_stack(path))

    def load_map(self, path: str) -> ElasticityMap:
        try:
            return read_map_csv(path, self.config.geometry)
        except ExportError:
            # Maps of resized runs carry their own dims.
            emap = read_map_csv(path)
            return ElasticityMap(
                values=emap.values, valid=emap.valid,
                geometry=self.config.geometry.with_dims(self.config.geometry.n_frames, *emap.shape),
            )

