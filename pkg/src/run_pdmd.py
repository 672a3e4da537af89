# run_pdmd.py

import argparse
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from bench_models import cmd_bench
from dmd.classical import DEFAULT_TAU, split_snapshots
from dmd.parametric.factory import METHODS, fit_parametric
from evaluate_models import cmd_evaluate, load_training
from solvers.generate import PROBLEMS, GenerationResult, generate_set, get_problem
from util.config import FIELD_CHOICES, RunConfig, build_config, parse_int_list
from util.errors import (
    InvalidInputError,
    NumericalFailureError,
    PdmdError,
    RankDeficiencyError,
    ResourceError,
    SnapshotFormatError,
    SnapshotIOError,
    UndefinedMetricError,
)
from util.linalg import thin_svd
from util.snapshot_io import SERIES_SUFFIX, load_model, save_model, write_series

logger = logging.getLogger(__name__)

# --- Configuration ---
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
MODEL_SUFFIX = ".npz"
SINGULAR_VALUES_SHOWN = 5


# --- Helper Functions ---

def exit_code(error: BaseException) -> int:
    if isinstance(error, (SnapshotIOError, SnapshotFormatError)):
        return EXIT_IO
    if isinstance(error, (NumericalFailureError, UndefinedMetricError, ResourceError)):
        return EXIT_NUMERICAL
    if isinstance(error, InvalidInputError):
        return EXIT_USAGE
    return 1


def default_model_path(cfg: RunConfig, method: str, rank: Optional[int]) -> str:
    return os.path.join(cfg.out, f"{method}_r{rank if rank else 'auto'}{MODEL_SUFFIX}")


def report_limiting_singular_values(ts, error: RankDeficiencyError) -> None:
    """Prints the trailing singular values of the series that limited the rank."""
    if error.series is None:
        return
    sigma = thin_svd(split_snapshots(ts.series[error.series])[0]).sigma
    tail = ", ".join(f"{s:.3e}" for s in sigma[-SINGULAR_VALUES_SHOWN:])
    print(f"  Series {error.series} ({ts.series[error.series].params.tolist()}): "
          f"{sigma.size} singular values, smallest: {tail}", file=sys.stderr)


def prediction_times(cfg: RunConfig, model) -> Optional[np.ndarray]:
    if cfg.t_end is None:
        return None
    steps = int(round((cfg.t_end - model.t0) / model.dt))
    if steps < 0:
        raise InvalidInputError(f"--t-end {cfg.t_end} precedes the first snapshot at t={model.t0:g}.")
    return model.t0 + np.arange(steps + 1) * model.dt


# --- Subcommands ---

def cmd_generate(cfg: RunConfig) -> GenerationResult:
    if not cfg.problem:
        raise InvalidInputError(f"generate needs --problem ({', '.join(PROBLEMS)}).")
    grid = get_problem(cfg.problem).grid.with_overrides(**cfg.grid_overrides())
    print(f"\nGenerating '{cfg.problem}' snapshots on a {'x'.join(map(str, grid.dims))} grid "
          f"({grid.num_steps} steps, dt={grid.dt}) into '{cfg.out}'")
    start = time.time()
    result = generate_set(
        cfg.problem, cfg.params, grid, cfg.out, cfg.split, cfg.seed, cfg.threads, progress=True,
    )
    counts = {role: len(result.manifest.entries_for(role)) for role in ("train", "test")}
    print(f"\n{counts['train']} train + {counts['test']} test entries, "
          f"{len(result.failures)} failed ({time.time() - start:.2f}s)")
    return result


def cmd_train(cfg: RunConfig) -> str:
    _, ts = load_training(cfg)
    method = cfg.methods[0]
    print(f"\nTraining {method} on {len(ts)} series (n={ts.n}, {ts.series[0].num_snapshots} snapshots)")
    start = time.time()
    try:
        model = fit_parametric(
            method, ts, cfg.tau, cfg.rank,
            num_neighbors=cfg.neighbors, init_coeffs=cfg.init_coeffs, init_frame=cfg.init_frame, strict=cfg.strict,
            normalize_axes=cfg.normalize_axes,
        )
    except RankDeficiencyError as e:
        report_limiting_singular_values(ts, e)
        raise
    logger.info("cmd_train: %s rank %d (tau=%g, requested %s)", method, model.rank, cfg.tau, cfg.rank)
    path = cfg.model or default_model_path(cfg, method, cfg.rank)
    save_model(model, path)
    print(f"  - rank {model.rank}, done ({time.time() - start:.2f}s)")
    print(f"  Model saved to '{path}'")
    return path


def cmd_predict(cfg: RunConfig) -> str:
    if not cfg.model:
        raise InvalidInputError("predict needs --model.")
    if not cfg.theta:
        raise InvalidInputError("predict needs --theta.")
    model = load_model(cfg.model)
    model.strict = model.strict or cfg.strict
    series = model.predict(cfg.theta, prediction_times(cfg, model))
    for note in series.diagnostics:
        print(f"Warning: {note}", file=sys.stderr)
    label = "_".join(f"{name}{value:g}" for name, value in zip(model.param_names, series.params))
    path = os.path.join(cfg.out, f"prediction_{model.variant}_{label}{SERIES_SUFFIX}")
    write_series(series, path)
    print(f"\nPrediction at theta={series.params.tolist()} ({series.num_snapshots} states) written to '{path}'")
    return path


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


# --- Argument Parsing ---

def build_parser() -> argparse.ArgumentParser:
    """Flags default to None so that only the given ones override a config file."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="text file of 'key = value' settings")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes (capped by PDMD_THREADS)")
    common.add_argument("--seed", type=int)
    common.add_argument("--verbose", action="store_true", default=None)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--manifest", help="manifest file or its directory (default: --out)")
    data.add_argument("--field", dest="state_field", choices=FIELD_CHOICES)
    data.add_argument("--train-stride", type=int, help="keep every k-th training entry")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--tau", type=float, help=f"retained energy fraction (default {DEFAULT_TAU})")
    model.add_argument("--J", "--neighbors", dest="neighbors", type=int, help="interpolation neighbours")
    model.add_argument("--normalize-axes", action="store_true", default=None, help="divide parameter distances by the training range")
    model.add_argument("--init-coeffs", choices=("per-parameter", "global"))
    model.add_argument("--init-frame", choices=("reduced", "modal"))
    model.add_argument("--strict", action="store_true", default=None)

    parser = argparse.ArgumentParser(description="Parametric dynamic mode decomposition toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="solve a problem over a parameter grid")
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--param", dest="params", action="append", help="name=lo:hi:count (repeat for a tensor grid)")
    p.add_argument("--split", help="odd-even | random<k> | list:<file>")
    p.add_argument("--dims", type=lambda s: tuple(int(v) for v in s.split(",")), help="cells per axis, e.g. 64,32")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--stride", type=int, help="record every k-th time step")

    p = sub.add_parser("train", parents=[common, data, model], help="train a parametric model")
    p.add_argument("--method", dest="methods", type=lambda s: [s], help=", ".join(METHODS))
    p.add_argument("--rank", dest="ranks", type=lambda s: [int(s)])
    p.add_argument("--model", help="output model file")

    p = sub.add_parser("predict", parents=[common], help="predict the state at a new parameter")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--theta", type=lambda s: [float(v) for v in s.split(",")], help="comma-separated parameter vector")
    p.add_argument("--t-end", type=float, help="last prediction time (default: training window)")

    p = sub.add_parser("evaluate", parents=[common, data, model], help="error tables over the testing set")
    p.add_argument("--methods", type=lambda s: s.split(","), help="comma-separated, e.g. stacked,rkoi")
    p.add_argument("--ranks", help="e.g. 2,4,6 or 2:10:2")
    p.add_argument("--test-limit", type=int, help="evaluate only the first k testing entries")
    p.add_argument("--no-solve", action="store_true", default=None, help="fail instead of solving missing references")
    p.add_argument("--threshold", type=float, help="relative change that stops the parameter average")

    p = sub.add_parser("bench", parents=[common, data, model], help="prediction run-time sweeps")
    p.add_argument("--methods", type=lambda s: s.split(","))
    p.add_argument("--ranks", help="rank sweep, e.g. 10,20,30,40")
    p.add_argument("--ns", dest="ns_values", help="training-set sizes, e.g. 8,16,40")
    p.add_argument("--repeats", type=int)
    p.add_argument("--theta", type=lambda s: [float(v) for v in s.split(",")])
    return parser


def parse_config(argv: Optional[List[str]] = None) -> RunConfig:
    args = build_parser().parse_args(argv)
    flags = vars(args).copy()
    for key in ("ranks", "ns_values"):
        if isinstance(flags.get(key), str):
            flags[key] = parse_int_list(flags[key])
    return build_config(args.command, flags, flags.pop("config", None))


# --- Main Execution Logic ---

def main(argv: Optional[List[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except PdmdError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code(e)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if cfg.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    print("=" * 60)
    print(f"  Parametric DMD: {cfg.command}  ")
    print("=" * 60)

    start = time.time()
    try:
        result = COMMANDS[cfg.command](cfg)
    except PdmdError as e:
        print(f"\nError: {e}", file=sys.stderr)
        return exit_code(e)

    print(f"\nFinished in {time.time() - start:.2f}s")
    if isinstance(result, GenerationResult) and result.failures:
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
