# bench_models.py

import logging
import os
import statistics
import sys
import time
import warnings
from typing import List, Optional

import numpy as np
import pandas as pd

from dmd.parametric.factory import predict_from_training
from dmd.snapshots import TrainingSet
from evaluate_models import load_training
from util.config import RunConfig
from util.errors import InvalidInputError, NumericalFailureError, TimerResolutionWarning
from util.linalg import svd_calls

logger = logging.getLogger(__name__)

# --- Configuration ---
BENCH_CSV = "bench.csv"
SLOPES_CSV = "bench_slopes.csv"
DEFAULT_RANKS = [10, 20, 30, 40]
MIN_REPEATS = 5
TIMER_RESOLUTION = 0.010


# --- Helper Functions ---

def spread_subset(ts: TrainingSet, count: int) -> TrainingSet:
    """`count` training series spread evenly over the set (manifest order)."""
    if not 1 <= count <= len(ts):
        raise InvalidInputError(f"Cannot take {count} of {len(ts)} training series.")
    indices = np.unique(np.round(np.linspace(0, len(ts) - 1, count)).astype(int))
    return ts.subset(indices)


def bench_theta(cfg: RunConfig, manifest, ts: TrainingSet) -> np.ndarray:
    """--theta, else the first testing parameter, else the midpoint of the first two training parameters."""
    if cfg.theta:
        return np.array(cfg.theta, dtype=float)
    tests = manifest.entries_for("test")
    if tests:
        return np.array(tests[0].params, dtype=float)
    return 0.5 * (ts.params[0] + ts.params[min(1, len(ts) - 1)])


def time_prediction(ts: TrainingSet, theta, method: str, rank: Optional[int], cfg: RunConfig) -> dict:
    """Median wall time of end-to-end predictions, decompositions included."""
    seconds = []
    for _ in range(cfg.repeats):
        svd_calls.reset()
        start = time.perf_counter()
        predict_from_training(
            ts, theta, method=method, J=cfg.neighbors, tau=cfg.tau, r_override=rank,
            init_coeffs=cfg.init_coeffs, init_frame=cfg.init_frame, normalize_axes=cfg.normalize_axes,
        )
        seconds.append(time.perf_counter() - start)
    return {"method": method, "rank": rank, "N_S": len(ts), "seconds": statistics.median(seconds), "svd_calls": svd_calls.count}


def rank_slopes(frame: pd.DataFrame) -> pd.DataFrame:
    """Least-squares slope of seconds against rank per method, at the largest N_S."""
    rows = []
    for method, group in frame.groupby("method", sort=False):
        group = group[group["N_S"] == group["N_S"].max()]
        if group["rank"].nunique() < 2:
            continue
        slope, intercept = np.polyfit(group["rank"].astype(float), group["seconds"], 1)
        rows.append({"method": method, "seconds_per_rank": slope, "intercept": intercept})
    return pd.DataFrame(rows, columns=["method", "seconds_per_rank", "intercept"])


# --- Main Execution Logic ---

def cmd_bench(cfg: RunConfig) -> pd.DataFrame:
    """
    Times end-to-end prediction for every method over a rank sweep (at the
    full training set) and an N_S sweep (at the first rank), writing
    (method, rank, N_S, seconds, svd_calls) rows to <out>/bench.csv.
    """
    manifest, ts = load_training(cfg)
    theta = bench_theta(cfg, manifest, ts)
    ranks = cfg.ranks or DEFAULT_RANKS
    sizes = cfg.ns_values or [len(ts)]
    if cfg.repeats < MIN_REPEATS:
        warnings.warn(
            f"{cfg.repeats} repetitions are too few for a stable median (use at least {MIN_REPEATS})",
            TimerResolutionWarning, stacklevel=2,
        )

    cases = [(rank, len(ts)) for rank in ranks]
    cases += [(ranks[0], size) for size in sizes if size != len(ts)]
    print(f"\nBenchmarking {cfg.methods} at theta={theta.tolist()}: {len(cases)} cases x {cfg.repeats} repetitions")

    rows: List[dict] = []
    for method in cfg.methods:
        for rank, size in cases:
            print(f"  - Running {method} rank {rank} N_S {size}...")
            try:
                row = time_prediction(spread_subset(ts, size), theta, method, rank, cfg)
            except NumericalFailureError as e:
                print(f"    ERROR! ({e})", file=sys.stderr)
                continue
            print(f"    done ({row['seconds']:.4f}s median, {row['svd_calls']} SVDs)")
            rows.append(row)

    frame = pd.DataFrame(rows, columns=["method", "rank", "N_S", "seconds", "svd_calls"])
    fast = frame[frame["seconds"] < TIMER_RESOLUTION]
    if not fast.empty:
        warnings.warn(
            f"{len(fast)} median timings lie below {TIMER_RESOLUTION * 1e3:.0f} ms and are dominated by timer resolution",
            TimerResolutionWarning, stacklevel=2,
        )

    os.makedirs(cfg.out, exist_ok=True)
    frame.to_csv(os.path.join(cfg.out, BENCH_CSV), index=False, lineterminator="\n")
    slopes = rank_slopes(frame)
    slopes.to_csv(os.path.join(cfg.out, SLOPES_CSV), index=False, lineterminator="\n")
    if not slopes.empty:
        print("\nRank versus run time (least-squares slope)")
        print(slopes.to_string(index=False))
    print(f"\nResults written to '{cfg.out}'")
    return frame


if __name__ == '__main__':
    from run_pdmd import main
    sys.exit(main(["bench", *sys.argv[1:]]))
