"""
Command-line application
Scenario generation, surrogate training, inversion, performance studies and export
"""
import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from config.presets import RHO_MODES, SCHEME_ALIASES
from config.settings import settings
from core.estimator import save_summary
from core.pipeline import InversionPipeline
from core.smc import Scheme
from core.surrogate import load_surrogate, save_surrogate, save_training_set
from models.schemas import ScenarioSpec, SmcConfig, TraceRecord
from services.export_service import export_profiles
from services.scenario_service import ScenarioService, build_scenario_spec
from services.study_service import run_average_precision_study, run_stochastic_variation_study
from utils.exceptions import ConfigurationError, InversionException
from utils.logger import setup_logger
from utils.serialization import read_document, read_matrix_csv, write_document, write_jsonl, write_matrices, write_matrix_csv

logger = setup_logger(__name__)


def _apply_overrides(spec: ScenarioSpec, args: argparse.Namespace) -> ScenarioSpec:
    updates = {}
    if args.scheme:
        updates["scheme"] = SCHEME_ALIASES[args.scheme]
    if args.particles:
        updates["n_particles"] = args.particles
    if args.rho_mode:
        updates["rho_mode"] = args.rho_mode
    if args.seed is not None:
        updates["smc_seed"] = args.seed
    if not updates:
        return spec
    # validators re-run on the overridden fields
    return ScenarioSpec.model_validate({**spec.model_dump(), **updates})


def _load_spec(args: argparse.Namespace) -> ScenarioSpec:
    if args.spec:
        spec = read_document(Path(args.spec), ScenarioSpec)
    else:
        spec = build_scenario_spec(desk=args.desk)
    return _apply_overrides(spec, args)


def cmd_generate_scenario(args: argparse.Namespace) -> int:
    if args.defaults and args.desk:
        raise ConfigurationError("--defaults selects the full-scale preset and cannot be combined with --desk")
    overrides = {}
    if args.noise is not None:
        overrides["noise_std"] = args.noise
    if args.truth_source:
        overrides["truth_source"] = args.truth_source
    spec = _apply_overrides(build_scenario_spec(desk=args.desk, **overrides), args)
    out = Path(args.out)
    write_document(out / "scenario.json", spec)
    logger.info(f"Scenario written to {out / 'scenario.json'}")
    return 0


def cmd_train_surrogate(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    forward, training, surrogate = ScenarioService().train(spec)
    out = Path(args.out)
    save_surrogate(out, surrogate, args.storage)
    save_training_set(out, training)
    logger.info(f"Surrogate written to {out}")
    return 0


def _print_record(record: TraceRecord) -> None:
    sys.stdout.write(record.model_dump_json() + "\n")
    sys.stdout.flush()


def cmd_invert(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    surrogate = load_surrogate(Path(args.surrogate)) if args.surrogate else None
    prepared = ScenarioService().prepare(spec, surrogate)

    out = Path(args.out)
    if args.observations:
        observations = read_matrix_csv(Path(args.observations))
    else:
        truth = prepared.truth(spec.truth_seed)
        observations = prepared.observations(truth, spec.data_seed)
        write_matrix_csv(out / "truth.csv", truth)
    write_matrix_csv(out / "observations.csv", observations)

    pipeline = InversionPipeline(
        prior=spec.prior,
        surrogate=prepared.surrogate,
        scheme=Scheme(spec.scheme),
        n_particles=spec.n_particles,
        rho_mode=spec.rho_mode,
        config=SmcConfig.from_settings(),
        retain_covariances=args.covariances,
    )
    result = pipeline.run(observations, spec.smc_seed, on_generation=_print_record)

    save_summary(out, result.summary, result.header())
    write_jsonl(out / "trace.jsonl", result.trace)
    if args.samples:
        samples = pipeline.sample(result, args.samples, spec.smc_seed)
        write_matrices(out, "samples", {"samples": samples}, meta={"count": args.samples, "layout": "sample, stage, state"})
    logger.info(f"Inversion written to {out}")
    return 0


def cmd_study_stochastic(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    report = run_stochastic_variation_study(spec, repetitions=args.reps)
    write_document(Path(args.out) / "stochastic_report.json", report)
    print(json.dumps(report.summary, sort_keys=True))
    return 0


def cmd_study_precision(args: argparse.Namespace) -> int:
    spec = _load_spec(args)
    report = run_average_precision_study(spec, num_datasets=args.datasets, noise_std=args.noise)
    write_document(Path(args.out) / "precision_report.json", report)
    print(json.dumps(report.summary, sort_keys=True))
    return 0


def cmd_export_profiles(args: argparse.Namespace) -> int:
    truth = read_matrix_csv(Path(args.truth)) if args.truth else None
    export_profiles(Path(args.summary), Path(args.out), truth)
    return 0


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec", help="Scenario JSON file")
    parser.add_argument("--desk", action="store_true", help="Desk-scale preset instead of full scale when --spec is not given")
    parser.add_argument("--seed", type=int, help="SMC seed")
    parser.add_argument("--scheme", choices=sorted(SCHEME_ALIASES), help="Interpolating scheme")
    parser.add_argument("--particles", type=int, help="Number of particles N_p")
    parser.add_argument("--rho-mode", choices=RHO_MODES, help="Dimension of rho")
    parser.add_argument("--out", default=".", help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbsmc", description=f"{settings.APP_NAME} v{settings.APP_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate-scenario", help="Write a scenario JSON")
    _add_run_options(generate)
    generate.add_argument("--defaults", action="store_true", help="Full-scale preset, stated explicitly")
    generate.add_argument("--noise", type=float, help="Observation noise sigma_n")
    generate.add_argument("--truth-source", choices=["perturbation", "prior"])
    generate.set_defaults(handler=cmd_generate_scenario)

    train = commands.add_parser("train-surrogate", help="Fit the per-frequency linear surrogate")
    _add_run_options(train)
    train.add_argument("--storage", choices=["json", "binary"], help="Surrogate matrix storage")
    train.set_defaults(handler=cmd_train_surrogate)

    invert = commands.add_parser("invert", help="Run one inversion and write the posterior summary")
    _add_run_options(invert)
    invert.add_argument("--surrogate", help="Directory holding surrogate.json")
    invert.add_argument("--observations", help="Observation CSV (K_f rows, obs_dim columns)")
    invert.add_argument("--samples", type=int, default=0, help="Posterior trajectories to draw")
    invert.add_argument("--covariances", action="store_true", help="Keep the full posterior covariances")
    invert.set_defaults(handler=cmd_invert)

    stochastic = commands.add_parser("study-stochastic", help="Repeated inversions of one dataset")
    _add_run_options(stochastic)
    stochastic.add_argument("--reps", type=int, default=30)
    stochastic.set_defaults(handler=cmd_study_stochastic)

    precision = commands.add_parser("study-precision", help="Inversions of independent datasets")
    _add_run_options(precision)
    precision.add_argument("--datasets", type=int, default=30)
    precision.add_argument("--noise", type=float, help="Override sigma_n")
    precision.set_defaults(handler=cmd_study_precision)

    export = commands.add_parser("export-profiles", help="Profiles with sigma bands and rho histograms")
    export.add_argument("--summary", required=True, help="Directory written by invert")
    export.add_argument("--truth", help="Truth CSV to include in the profiles")
    export.add_argument("--out", default=".", help="Output directory")
    export.set_defaults(handler=cmd_export_profiles)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (InversionException, ValueError, OSError) as exc:
        code = getattr(exc, "code", type(exc).__name__)
        logger.error(f"{args.command} failed: [{code}] {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
