"""
Command-line surface: ``bigat <command> [options]``.

Machine-readable results (CSV) go to standard output or ``--output``;
diagnostics go to standard error. Exit codes: 0 success, 1 usage or
configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional, Sequence

import fsspec
import httpx
import pandas as pd

from . import __version__
from . import constants as _ct
from .config import RunConfig, parse_config_text, parse_overrides, sidecar_path
from .data import discover_scene_files, hold_one_out_split, load_split_manifest, load_track_files
from .errors import (
    BigatError,
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetFetchError,
    DeterminismError,
    DimensionError,
    GridFormatError,
    NumericError,
    TrackParseError,
)
from .evaluation import (
    evaluate_baseline,
    evaluate_best_of_k,
    holdout_experiment,
    k_degradation_table,
    latent_grid,
    latent_sweep,
    metrics_table,
    sample_table,
)
from .fetch import fetch_datasets
from .gradcheck import results_table, run_suite
from .model import BigatModel
from .scene import SceneSample
from .synth import SYNTH_KINDS, SynthSpec, attach_mode_labels, modes_path, read_mode_labels, synth_generate, write_synthetic
from .training import fit

logger = logging.getLogger("bigat.cli")

LOG_LEVEL_ENV = "BIGAT_LOG_LEVEL"
LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors through exit code 1 instead of exiting."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {value}")
    return value


def _positive_int_list(text: str) -> list[int]:
    values = [_positive_int(part.strip()) for part in text.split(",") if part.strip()]
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got '{text}'") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


# ------------------------------------------------------------------ parser


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat 'key = value' config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="random seed (config key 'seed')")


def _data_arg(parser: argparse.ArgumentParser, required: bool = False) -> None:
    parser.add_argument(
        "--data",
        action="append",
        default=[],
        required=required,
        help="track file (repeatable); defaults to the config's data keys",
    )


def _output_arg(parser: argparse.ArgumentParser, help_text: str = "CSV output path (default: stdout)") -> None:
    parser.add_argument("--output", "-o", help=help_text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bigat", description="Social-BiGAT trajectory forecasting at desk scale.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help=f"logging level (default: ${LOG_LEVEL_ENV} or INFO)")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    train = commands.add_parser("train", help="train a model and write a checkpoint")
    _common(train)
    _data_arg(train)
    train.add_argument("--checkpoint", required=True, help="checkpoint path to write")
    train.add_argument("--epochs", type=int)
    train.add_argument("--max-steps", type=int)
    train.add_argument("--log", dest="training_log", help="training log CSV path")
    train.add_argument("--holdout", help="train on every scene set except this one")

    evaluate = commands.add_parser("evaluate", help="best-of-K ADE/FDE of a checkpoint")
    _common(evaluate)
    _data_arg(evaluate)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--k", type=_positive_int)
    evaluate.add_argument("--k-list", type=_positive_int_list, help="comma separated K values, e.g. 20,10,5,1")
    evaluate.add_argument("--mode", choices=("min-ade", "independent"))
    evaluate.add_argument("--workers", type=int)
    evaluate.add_argument("--scene-name", default="", help="label for the 'scene' column")
    _output_arg(evaluate)

    sample = commands.add_parser("sample", help="write predicted trajectories for every scene")
    _common(sample)
    _data_arg(sample)
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--samples", type=_positive_int, default=1, help="latent codes per scene")
    _output_arg(sample)

    sweep = commands.add_parser("sweep", help="decode one scene over a grid of latent codes")
    _common(sweep)
    _data_arg(sweep)
    sweep.add_argument("--checkpoint", required=True)
    sweep.add_argument("--scene-index", type=int, default=0)
    sweep.add_argument("--axis", type=int, default=0, help="latent dimension to vary")
    sweep.add_argument("--values", type=_float_list, default="-2,-1,0,1,2", help="comma separated values along the axis")
    sweep.add_argument("--svg", help="also write an SVG overlay here")
    _output_arg(sweep)

    synth = commands.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--kind", choices=SYNTH_KINDS, default="constant-velocity")
    synth.add_argument("--scenes", type=int, default=100)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--min-pedestrians", type=int, default=1)
    synth.add_argument("--max-pedestrians", type=int, default=4)
    synth.add_argument("--lateral-offset", type=float, default=1.0)
    synth.add_argument("--output", "-o", required=True, help="track file to write")

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--step", type=float, default=1e-4)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--coordinates", type=int, default=4, help="coordinates checked per weight")
    _output_arg(gradcheck)

    baseline = commands.add_parser("baseline", help="ADE/FDE of the least-squares linear baseline")
    _common(baseline)
    _data_arg(baseline)
    baseline.add_argument("--scene-name", default="")
    _output_arg(baseline)

    holdout = commands.add_parser("holdout", help="train/evaluate rotating the held-out scene set")
    _common(holdout)
    holdout.add_argument("--data-dir")
    holdout.add_argument("--holdout", help="run only this held-out scene")
    holdout.add_argument("--k", type=_positive_int)
    holdout.add_argument("--epochs", type=int)
    holdout.add_argument("--max-steps", type=int)
    _output_arg(holdout)

    fetch = commands.add_parser("fetch", help="download datasets listed in a JSON manifest")
    fetch.add_argument("--manifest-url", help="manifest URL (default: $BIGAT_DATASET_MANIFEST)")
    fetch.add_argument("--data-dir", help="target directory (default: $BIGAT_DATA_DIR or data)")
    return parser


# ----------------------------------------------------------------- helpers


def _configure_logging(level: Optional[str]) -> None:
    name = (level or os.getenv(LOG_LEVEL_ENV, "") or "INFO").upper()
    if not isinstance(logging.getLevelName(name), int):
        raise UsageError(f"unknown log level '{name}'")
    logging.basicConfig(level=name, format=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S", stream=sys.stderr)


def _load_config(args: argparse.Namespace, checkpoint: Optional[str] = None, **flags: object) -> RunConfig:
    """Sidecar of ``checkpoint`` (if any), then ``--config``, then ``--set``, then dedicated flags."""
    config = RunConfig()
    if checkpoint:
        sidecar = sidecar_path(checkpoint)
        fs, path = fsspec.core.url_to_fs(sidecar)
        if fs.exists(path):
            config = RunConfig.load(sidecar)
    if getattr(args, "config", None):
        with fsspec.open(args.config, "r") as handle:
            config = RunConfig.from_mapping(parse_config_text(handle.read()), config)
    overrides = parse_overrides(getattr(args, "overrides", []))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    overrides.update({key: value for key, value in flags.items() if value is not None})
    return RunConfig.from_mapping(overrides, config) if overrides else config


def _scenes(paths: Sequence[str], config: RunConfig, *, train: bool) -> list[SceneSample]:
    """Scenes from explicit files, else the config's data, split or hold-out keys."""
    if paths:
        scenes = load_track_files(list(paths), stride=config.stride)
        return _with_modes(scenes, paths)
    explicit = config.train_data if train else config.test_data
    if explicit:
        files = [p.strip() for p in explicit.split(",") if p.strip()]
        return _with_modes(load_track_files(files, stride=config.stride), files)
    if config.split_manifest:
        split = load_split_manifest(config.split_manifest, stride=config.stride)
        return split.train if train else split.test
    if config.holdout:
        split = hold_one_out_split(discover_scene_files(config.data_dir), config.holdout, stride=config.stride)
        return split.train if train else split.test
    raise UsageError("no data: pass --data or set train_data/test_data, split_manifest or holdout")


def _with_modes(scenes: list[SceneSample], paths: Sequence[str]) -> list[SceneSample]:
    labels: dict[str, str] = {}
    for path in paths:
        sidecar = modes_path(path)
        fs, local = fsspec.core.url_to_fs(sidecar)
        if fs.exists(local):
            labels.update(read_mode_labels(sidecar))
    return attach_mode_labels(scenes, labels) if labels else scenes


def _require(scenes: list[SceneSample]) -> list[SceneSample]:
    if not scenes:
        raise TrackParseError("no complete 20-step windows in the given data")
    return scenes


def _emit(table: pd.DataFrame, output: Optional[str]) -> None:
    if output:
        with fsspec.open(output, "w") as handle:
            table.to_csv(handle, index=False, lineterminator="\n")
        logger.info("wrote %s (%d rows)", output, len(table))
    else:
        table.to_csv(sys.stdout, index=False, lineterminator="\n")


def _trainer(config: RunConfig):
    def train(model: BigatModel, scenes: list[SceneSample]):
        return fit(
            model,
            scenes,
            weights=config.loss_weights(),
            optimizer=config.optimizer_config(),
            epochs=config.epochs,
            max_steps=config.max_steps or None,
            seed=config.seed,
        )

    return train


# ---------------------------------------------------------------- commands


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(
        args, epochs=args.epochs, max_steps=args.max_steps, training_log=args.training_log, holdout=args.holdout
    )
    scenes = _require(_scenes(args.data, config, train=True))
    model = BigatModel.create(config.model_config(), seed=config.seed)
    config.save(sidecar_path(args.checkpoint))
    fit(
        model,
        scenes,
        weights=config.loss_weights(),
        optimizer=config.optimizer_config(),
        epochs=config.epochs,
        max_steps=config.max_steps or None,
        seed=config.seed,
        log_path=config.training_log or None,
        checkpoint_path=args.checkpoint,
        checkpoint_every=config.checkpoint_every,
    )
    return _ct.EXIT_OK


def _model(args: argparse.Namespace, config: RunConfig) -> BigatModel:
    return BigatModel.from_checkpoint(config.model_config(), args.checkpoint)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args, args.checkpoint, k=args.k, best_of_k_mode=args.mode, workers=args.workers)
    model = _model(args, config)
    scenes = _require(_scenes(args.data, config, train=False))
    if args.k_list:
        ks = args.k_list
        table = k_degradation_table(
            model, scenes, ks, seed=config.seed, mode=config.best_of_k_mode, workers=config.workers, scene_name=args.scene_name
        )
    else:
        result = evaluate_best_of_k(
            model, scenes, config.k, seed=config.seed, mode=config.best_of_k_mode, workers=config.workers, scene_name=args.scene_name
        )
        table = metrics_table([result])
    _emit(table, args.output)
    return _ct.EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    config = _load_config(args, args.checkpoint)
    model = _model(args, config)
    scenes = _require(_scenes(args.data, config, train=False))
    _emit(sample_table(model, scenes, args.samples, seed=config.seed, workers=config.workers), args.output)
    return _ct.EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args, args.checkpoint)
    model = _model(args, config)
    scenes = _require(_scenes(args.data, config, train=False))
    if not 0 <= args.scene_index < len(scenes):
        raise UsageError(f"--scene-index must lie in [0, {len(scenes) - 1}]")
    scene = scenes[args.scene_index]
    if not 0 <= args.axis < config.latent_dim:
        raise UsageError(f"--axis must lie in [0, {config.latent_dim - 1}]")
    values = args.values
    table = latent_sweep(model, scene, latent_grid(config.latent_dim, values, args.axis))
    _emit(table, args.output)
    if args.svg:
        from .plotting import write_sweep_svg

        write_sweep_svg(scene, table, args.svg)
    return _ct.EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        kind=args.kind,
        scenes=args.scenes,
        min_pedestrians=args.min_pedestrians,
        max_pedestrians=args.max_pedestrians,
        noise=args.noise,
        seed=args.seed,
        lateral_offset=args.lateral_offset,
    )
    write_synthetic(synth_generate(spec), args.output)
    return _ct.EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_suite(seed=args.seed, step=args.step, tolerance=args.tolerance, coordinates=args.coordinates)
    table = results_table(results)
    _emit(table, args.output)
    failed = table[~table["passed"]]
    for name, error in zip(failed["check"], failed["max_relative_error"]):
        logger.error("gradient check failed: %s (relative error %.3g)", name, error)
    return _ct.EXIT_OK if failed.empty else _ct.EXIT_NUMERIC


def cmd_baseline(args: argparse.Namespace) -> int:
    config = _load_config(args)
    scenes = _require(_scenes(args.data, config, train=False))
    _emit(metrics_table([evaluate_baseline(scenes, scene_name=args.scene_name)]), args.output)
    return _ct.EXIT_OK


def cmd_holdout(args: argparse.Namespace) -> int:
    config = _load_config(
        args, data_dir=args.data_dir, holdout=args.holdout, k=args.k, epochs=args.epochs, max_steps=args.max_steps
    )
    files = discover_scene_files(config.data_dir)
    if not files:
        raise TrackParseError(f"no scene sets found under {config.data_dir}")
    table = holdout_experiment(
        files,
        config.model_config(),
        train=_trainer(config),
        k=config.k,
        seed=config.seed,
        held_out=config.holdout or None,
        stride=config.stride,
        mode=config.best_of_k_mode,
        workers=config.workers,
    )
    _emit(table, args.output)
    return _ct.EXIT_OK


def cmd_fetch(args: argparse.Namespace) -> int:
    fetch_datasets(args.manifest_url, args.data_dir)
    return _ct.EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
    "holdout": cmd_holdout,
    "fetch": cmd_fetch,
}

_DATA_ERRORS = (
    ContractError,
    DimensionError,
    TrackParseError,
    GridFormatError,
    CheckpointError,
    DatasetFetchError,
    FileNotFoundError,
    httpx.HTTPError,
)
_NUMERIC_ERRORS = (NumericError, DeterminismError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return _ct.EXIT_USAGE
    if isinstance(exc, _DATA_ERRORS):
        return _ct.EXIT_DATA
    if isinstance(exc, _NUMERIC_ERRORS):
        return _ct.EXIT_NUMERIC
    return _ct.EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_logging(args.log_level)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return _ct.EXIT_USAGE
    except (BigatError, FileNotFoundError, httpx.HTTPError) as exc:
        print(f"bigat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    raise SystemExit(main())
