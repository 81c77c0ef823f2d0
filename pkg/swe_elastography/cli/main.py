"""Command-line front-end: simulate, track, reconstruct, evaluate, pipeline.

Exit codes: 0 success, 2 usage/configuration error or missing input file,
3 runtime or data error.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict
from typing import Callable, List, Optional

from swe_elastography import __version__
from swe_elastography.config import TRACKERS, ElastographyConfig
from swe_elastography.core import RunManifest, append_results, focal_exclusion_mask, load_phantom_spec
from swe_elastography.core.manifest import MANIFEST_NAME
from swe_elastography.exceptions import ConfigurationError, PhantomSpecError, SweElastographyError
from swe_elastography.pipeline import DISPLACEMENT_STACK, RESULTS_TABLE, SUMMARY_TABLE, ElastographyPipeline, phantom_id_for

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swe-elastography",
        description="Shear-wave elastography simulation, tracking and reconstruction",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--config", required=True, help="key = value configuration file")
        sub.add_argument("--out", help="output directory (default: output_dir from config)")
        sub.add_argument("--seed", type=int, help="override the simulation seed")
        sub.add_argument("--quiet", action="store_true", help="warnings only, no progress bars")

    simulate = subparsers.add_parser("simulate", help="simulate truth displacements and RF frames")
    add_common(simulate)

    track = subparsers.add_parser("track", help="track an RF stack")
    add_common(track)
    track.add_argument("--rf", required=True, help="RF stack file")
    track.add_argument("--tracker", choices=["ncc", "variational"], help="tracker (default: first in config)")

    reconstruct = subparsers.add_parser("reconstruct", help="build SWS and Young's modulus maps")
    add_common(reconstruct)
    reconstruct.add_argument("--displacement", required=True, help="displacement stack file")

    evaluate = subparsers.add_parser("evaluate", help="compute SNR, CNR and MAE of a map")
    add_common(evaluate)
    evaluate.add_argument("--map", required=True, help="Young's modulus map CSV")
    evaluate.add_argument("--truth-map", required=True, help="ground-truth Young's modulus map CSV")
    evaluate.add_argument("--tracker", default="", help="tracker label written to the results row")

    pipeline = subparsers.add_parser("pipeline", help="run every stage in sequence")
    add_common(pipeline)
    pipeline.add_argument("--tracker", choices=list(TRACKERS), action="append",
                          help="tracker to run (repeatable; default: trackers from config)")
    return parser


def load_config(args: argparse.Namespace) -> ElastographyConfig:
    """Configuration file plus command-line overrides."""
    config = ElastographyConfig.from_file(args.config)
    if args.seed is not None:
        config.simulation.seed = args.seed
    if args.out:
        config.output_dir = args.out
    tracker = getattr(args, "tracker", None)
    if isinstance(tracker, list):
        config.trackers = tracker
    elif tracker and args.command == "track":
        config.trackers = [tracker]
    return config


def configure_logging(level: str, quiet: bool) -> None:
    level = "WARNING" if quiet else level.upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _run_stage(command: str, out_dir: str, config: ElastographyConfig, body: Callable[[RunManifest], None]) -> None:
    """Run a stage, writing a manifest that is marked FAILED if the stage raises."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(command=command, config=config.to_dict(), seeds={"simulation": config.seed})
    try:
        body(manifest)
    except BaseException as e:
        manifest.mark_failed(command, e)
        manifest.save_to_file(os.path.join(out_dir, MANIFEST_NAME))
        raise
    manifest.complete_stage(command)
    manifest.mark_ok()
    manifest.save_to_file(os.path.join(out_dir, MANIFEST_NAME))


def cmd_simulate(config: ElastographyConfig, pipeline: ElastographyPipeline) -> None:
    """Simulate every configured and generated phantom (one sub-directory each when there are several)."""
    paths = pipeline.phantom_paths(config.output_dir)
    for path in paths:
        spec = load_phantom_spec(path)
        phantom_id = phantom_id_for(path)
        out_dir = config.output_dir if len(paths) == 1 else os.path.join(config.output_dir, phantom_id)
        pipeline.simulate(spec, out_dir, phantom_id)


def cmd_track(config: ElastographyConfig, pipeline: ElastographyPipeline, rf_path: str) -> None:
    tracker = config.trackers[0]
    if tracker == "truth":
        raise ConfigurationError("the truth tracker is only available in the pipeline command")
    rf = pipeline.load_rf(rf_path)

    def body(manifest: RunManifest) -> None:
        manifest.parameters["tracker"] = tracker
        manifest.parameters["rf"] = rf_path
        result = pipeline.track(rf, tracker, config.output_dir)
        manifest.parameters.update({f"tracker.{k}": v for k, v in result.parameters.items()})
        manifest.parameters["underflow_frames"] = list(result.underflow_frames)
        manifest.add_artifact("displacement", os.path.join(config.output_dir, DISPLACEMENT_STACK))

    _run_stage("track", config.output_dir, config, body)


def cmd_reconstruct(config: ElastographyConfig, pipeline: ElastographyPipeline, displacement_path: str) -> None:
    displacement = pipeline.load_displacement(displacement_path)
    density = load_phantom_spec(config.phantoms[0]).density if config.phantoms else 1000.0

    def body(manifest: RunManifest) -> None:
        manifest.parameters.update({f"tof.{k}": v for k, v in asdict(config.tof).items()})
        manifest.parameters["density"] = density
        manifest.parameters["displacement"] = displacement_path
        reconstruction = pipeline.reconstruct(displacement, config.output_dir, density)
        manifest.parameters["excluded_columns"] = int(reconstruction.exclusion[:, 0].sum())
        manifest.parameters["valid_fraction"] = reconstruction.valid_fraction()

    _run_stage("reconstruct", config.output_dir, config, body)


def cmd_evaluate(
    config: ElastographyConfig,
    pipeline: ElastographyPipeline,
    map_path: str,
    truth_map_path: str,
    tracker: str,
) -> None:
    if not config.phantoms:
        raise ConfigurationError("evaluation needs the phantom spec (set 'phantom = <path>')")
    spec = load_phantom_spec(config.phantoms[0])
    pred = pipeline.load_map(map_path)
    truth = pipeline.load_map(truth_map_path)

    def body(manifest: RunManifest) -> None:
        geometry = pred.geometry
        exclusion = focal_exclusion_mask(geometry, config.tof)
        row = pipeline.evaluate(
            pred, truth, spec, exclusion, phantom_id_for(config.phantoms[0]), tracker, geometry=geometry,
        )
        results_path = os.path.join(config.output_dir, RESULTS_TABLE)
        append_results([row], results_path)
        manifest.parameters["row"] = row.to_dict()
        manifest.add_artifact("results", results_path)

    _run_stage("evaluate", config.output_dir, config, body)


def cmd_pipeline(config: ElastographyConfig, pipeline: ElastographyPipeline) -> None:
    rows = pipeline.run()
    logger.info(
        f"Pipeline wrote {len(rows)} result rows to {os.path.join(config.output_dir, RESULTS_TABLE)} "
        f"and the per-tracker summary to {os.path.join(config.output_dir, SUMMARY_TABLE)}"
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(os.getenv("SWE_LOG_LEVEL", "INFO"), args.quiet)

    try:
        config = load_config(args)
        configure_logging(config.log_level, args.quiet)
        pipeline = ElastographyPipeline(config, show_progress=not args.quiet)
        if args.command == "simulate":
            cmd_simulate(config, pipeline)
        elif args.command == "track":
            cmd_track(config, pipeline, args.rf)
        elif args.command == "reconstruct":
            cmd_reconstruct(config, pipeline, args.displacement)
        elif args.command == "evaluate":
            cmd_evaluate(config, pipeline, args.map, args.truth_map, args.tracker or config.trackers[0])
        else:
            cmd_pipeline(config, pipeline)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, PhantomSpecError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SweElastographyError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
