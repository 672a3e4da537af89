# solvers/generate.py

import itertools
import logging
import multiprocessing as mp
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from dmd.snapshots import TrainingSet
from solvers import incident_jet, nonlinear_diffusion, radiative_diffusion
from solvers.grid import GridSpec, ProblemParams
from util.errors import InvalidInputError, PdmdError, SnapshotIOError
from util.snapshot_io import (
    MANIFEST_NAME,
    SERIES_SUFFIX,
    Manifest,
    ManifestEntry,
    load_training_set,
    read_manifest,
    write_manifest,
    write_series,
)

logger = logging.getLogger(__name__)

# --- Configuration ---
THREADS_ENV = "PDMD_THREADS"
SERIES_DIR = "series"
LIST_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class Problem:
    solver: Callable
    grid: GridSpec
    param_names: Tuple[str, ...]
    skips_initial: bool = False

    def first_snapshot_time(self, grid: GridSpec, options: Optional[dict] = None) -> float:
        """Time of the first recorded state; one stride in when the solver skips the zero start."""
        skip = (options or {}).get("skip_initial", self.skips_initial)
        return grid.dt * grid.snapshot_stride if skip else 0.0


PROBLEMS: Dict[str, Problem] = {
    "diffusion": Problem(nonlinear_diffusion.solve_nonlinear_diffusion, nonlinear_diffusion.DEFAULT_GRID, ("b", "a"), skips_initial=True),
    "jet": Problem(incident_jet.solve_incident_jet, incident_jet.DEFAULT_GRID, ("k",), skips_initial=True),
    "radiative": Problem(radiative_diffusion.solve_radiative_diffusion, radiative_diffusion.DEFAULT_GRID, ("Z", "alpha")),
}


@dataclass
class GenerationResult:
    manifest: Manifest
    training_set: Optional[TrainingSet]
    failures: List[Tuple[ManifestEntry, str]] = field(default_factory=list)
    timings: Dict[int, float] = field(default_factory=dict)


def get_problem(problem_id: str) -> Problem:
    if problem_id not in PROBLEMS:
        raise InvalidInputError(f"Unknown problem '{problem_id}'; choose from {sorted(PROBLEMS)}.")
    return PROBLEMS[problem_id]


def worker_count(requested: Optional[int] = None) -> int:
    """Worker pool size: the request, capped by PDMD_THREADS when set."""
    count = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            count = min(count, max(1, int(cap)))
        except ValueError:
            raise InvalidInputError(f"{THREADS_ENV} must be an integer, got '{cap}'.")
    return max(1, count)


def parse_param_spec(spec: str) -> Tuple[str, np.ndarray]:
    """'name=lo:hi:count' to (name, equally spaced values)."""
    try:
        name, bounds = spec.split("=", 1)
        lo, hi, count = bounds.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError as e:
        raise InvalidInputError(f"Parameter range '{spec}' is not of the form name=lo:hi:count.") from e
    if count < 1:
        raise InvalidInputError(f"Parameter range '{spec}' is empty.")
    return name.strip(), np.linspace(lo, hi, count)


def _read_param_list(path: str, dim: int) -> np.ndarray:
    rows = []
    try:
        with open(path, "r") as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if line:
                    rows.append([float(v) for v in line.replace(",", " ").split()])
    except OSError as e:
        raise SnapshotIOError(f"Could not read parameter list '{path}': {e}", path) from e
    except ValueError as e:
        raise InvalidInputError(f"Malformed parameter list '{path}': {e}") from e
    values = np.array(rows, dtype=float).reshape(-1, dim) if rows else np.empty((0, dim))
    return values


def split_parameters(axes: Sequence[np.ndarray], split: str, seed: Optional[int] = None) -> List[Tuple[Tuple[float, ...], str]]:
    """
    Tensor-product parameter grid with a train/test role per point.

    odd-even   alternate values along each axis; on multi-parameter grids
               points whose axis indices are all even train, all odd test,
               and mixed points are skipped
    random<k>  k points drawn as testing set with the given seed
    list:<f>   points listed in file f are the testing set
    """
    grid = list(itertools.product(*[range(len(a)) for a in axes]))
    if not grid:
        raise InvalidInputError("The parameter grid is empty.")

    def values(indices):
        return tuple(float(a[i]) for a, i in zip(axes, indices))

    if split == "odd-even":
        points = []
        for indices in grid:
            parity = {i % 2 for i in indices}
            if len(parity) == 1:
                points.append((values(indices), "train" if parity == {0} else "test"))
        return points
    if split.startswith("random"):
        try:
            k = int(split[len("random"):])
        except ValueError as e:
            raise InvalidInputError(f"Split '{split}' is not of the form random<k>.") from e
        if not 0 < k < len(grid):
            raise InvalidInputError(f"Cannot set aside {k} of {len(grid)} parameters for testing.")
        test = set(np.random.default_rng(seed).choice(len(grid), size=k, replace=False).tolist())
        return [(values(indices), "test" if j in test else "train") for j, indices in enumerate(grid)]
    if split.startswith("list:"):
        listed = _read_param_list(split[len("list:"):], len(axes))
        points = []
        for indices in grid:
            point = np.array(values(indices))
            is_test = listed.size and np.any(np.all(np.abs(listed - point) <= LIST_MATCH_TOL * np.maximum(1.0, np.abs(point)), axis=1))
            points.append((values(indices), "test" if is_test else "train"))
        return points
    raise InvalidInputError(f"Unknown split '{split}'; use odd-even, random<k> or list:<file>.")


def _solve_entry(job) -> Tuple[int, str, str, float]:
    """Pool worker: solve one parameter point and write its series file."""
    index, problem_id, names, values, grid, path, options = job
    start = time.time()
    try:
        problem = PROBLEMS[problem_id]
        params = ProblemParams.from_values(problem_id, names, values)
        series = problem.solver(params, grid, **options)
        write_series(replace(series, params=np.array(values)), path)
        return index, "done", "", time.time() - start
    except PdmdError as e:
        return index, "failed", str(e), time.time() - start


def _fresh_manifest(problem_id: str, names, points, grid: GridSpec, out_dir: str, t0: float = 0.0) -> Manifest:
    entries = [
        ManifestEntry(values, role, os.path.join(SERIES_DIR, f"{problem_id}_{j:04d}{SERIES_SUFFIX}"), "pending")
        for j, (values, role) in enumerate(points)
    ]
    return Manifest(problem_id, tuple(names), grid.to_fields(), entries, os.path.abspath(out_dir), t0)


def generate_set(
    problem_id: str,
    param_specs: Sequence[str],
    grid: Optional[GridSpec] = None,
    out_dir: str = ".",
    split: str = "odd-even",
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    solver_options: Optional[dict] = None,
    progress: bool = True,
) -> GenerationResult:
    """
    Runs the problem's solver at every point of the parameter grid, writes one
    series file per point and a manifest labelling train and test entries.

    An existing manifest for the same problem and parameters is resumed:
    completed entries whose files exist are not solved again. Failed solves
    are recorded in the manifest and reported, not raised.
    """
    problem = get_problem(problem_id)
    grid = grid or problem.grid
    if not param_specs:
        raise InvalidInputError("At least one parameter range is required.")
    parsed = [parse_param_spec(spec) for spec in param_specs]
    names = [name for name, _ in parsed]
    unknown = set(names) - set(problem.param_names)
    if unknown or len(set(names)) != len(names):
        raise InvalidInputError(f"Problem '{problem_id}' varies {problem.param_names}, got {names}.")
    points = split_parameters([axis for _, axis in parsed], split, seed)

    os.makedirs(os.path.join(out_dir, SERIES_DIR), exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    t0 = problem.first_snapshot_time(grid, solver_options)
    manifest = _fresh_manifest(problem_id, names, points, grid, out_dir, t0)
    if os.path.exists(manifest_path):
        previous = read_manifest(manifest_path)
        if (
            previous.problem == manifest.problem
            and previous.param_names == manifest.param_names
            and previous.grid == manifest.grid
            and previous.t0 == manifest.t0
            and [(e.params, e.role, e.path) for e in previous.entries] == [(e.params, e.role, e.path) for e in manifest.entries]
        ):
            manifest = previous
        else:
            raise InvalidInputError(f"'{manifest_path}' describes a different run; choose another output directory.")

    pending = [j for j, e in enumerate(manifest.entries) if e.status != "done" or not os.path.exists(manifest.resolve(e))]
    skipped = len(manifest.entries) - len(pending)
    if skipped:
        logger.info("generate_set: resuming, %d of %d entries already done", skipped, len(manifest.entries))
    write_manifest(manifest, manifest_path)

    result = solve_entries(manifest, manifest_path, pending, grid, workers, solver_options, progress)
    if any(e.role == "train" and e.status == "done" for e in manifest.entries):
        result.training_set = load_training_set(manifest)
    return result


def solve_entries(
    manifest: Manifest,
    manifest_path: str,
    indices: Sequence[int],
    grid: Optional[GridSpec] = None,
    workers: Optional[int] = None,
    solver_options: Optional[dict] = None,
    progress: bool = True,
) -> GenerationResult:
    """
    Solves the listed manifest entries over a bounded worker pool. The calling
    process is the only writer of the manifest, which is rewritten after every
    finished entry.
    """
    problem = get_problem(manifest.problem)
    grid = grid or (GridSpec.from_fields(manifest.grid) if manifest.grid else problem.grid)
    options = dict(solver_options or {})
    jobs = [
        (j, manifest.problem, manifest.param_names, manifest.entries[j].params, grid, manifest.resolve(manifest.entries[j]), options)
        for j in indices
    ]
    result = GenerationResult(manifest, None)
    pool_size = min(worker_count(workers), max(1, len(jobs)))
    bar = tqdm(total=len(jobs), desc=f"Solving {manifest.problem}", disable=not progress or not jobs)

    def record(outcome):
        index, status, message, seconds = outcome
        entry = manifest.entries[index]
        manifest.set_status(index, status)
        write_manifest(manifest, manifest_path)
        result.timings[index] = seconds
        label = ",".join(f"{n}={v:g}" for n, v in zip(manifest.param_names, entry.params))
        if status == "failed":
            result.failures.append((entry, message))
            tqdm.write(f"  - {label} [{entry.role}] FAILED ({message})")
        elif progress:
            tqdm.write(f"  - {label} [{entry.role}] done ({seconds:.2f}s)")
        bar.update(1)

    if pool_size == 1:
        for job in jobs:
            record(_solve_entry(job))
    else:
        with mp.Pool(processes=pool_size) as pool:
            for outcome in pool.imap(_solve_entry, jobs):
                record(outcome)
    bar.close()
    return result
