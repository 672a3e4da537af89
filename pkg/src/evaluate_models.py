# evaluate_models.py

import logging
import multiprocessing as mp
import os
import sys
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from dmd.parametric.factory import fit_parametric
from dmd.snapshots import SnapshotSeries, TrainingSet, field_slice
from metrics.errors import CSV_FLOAT_FORMAT, ErrorReport, aggregate, converged_param_average, per_field_errors, series_errors
from solvers.generate import solve_entries, worker_count
from util.config import RunConfig
from util.errors import NumericalFailureError, SnapshotIOError
from util.snapshot_io import MANIFEST_NAME, Manifest, load_training_set, read_manifest

logger = logging.getLogger(__name__)

# --- Configuration ---
EVAL_SUBDIR = "evaluate"
RANK_TABLE_CSV = "rank_table.csv"
SUMMARY_CSV = "summary.csv"


# --- Helper Functions ---

def manifest_path(cfg: RunConfig) -> str:
    path = cfg.manifest or cfg.out
    return os.path.join(path, MANIFEST_NAME) if os.path.isdir(path) else path


def training_field(cfg: RunConfig) -> Optional[str]:
    """Field the models train on; None means the full (coupled) state."""
    return None if cfg.state_field == "both" else cfg.state_field


def load_training(cfg: RunConfig) -> Tuple[Manifest, TrainingSet]:
    manifest = read_manifest(manifest_path(cfg))
    return manifest, load_training_set(manifest, cfg.train_stride, training_field(cfg))


def ensure_references(cfg: RunConfig, manifest: Manifest) -> List[int]:
    """
    Manifest indices of the testing entries to evaluate (the first
    `test_limit` of them). Missing reference series are solved on demand,
    or reported as an error with --no-solve.
    """
    indices = [j for j, e in enumerate(manifest.entries) if e.role == "test"]
    if cfg.test_limit is not None:
        indices = indices[:cfg.test_limit]
    missing = [j for j in indices if manifest.entries[j].status != "done" or not os.path.exists(manifest.resolve(manifest.entries[j]))]
    if missing and cfg.no_solve:
        gaps = ", ".join(manifest.entries[j].path for j in missing)
        raise SnapshotIOError(f"Missing reference solves for {len(missing)} testing entries: {gaps}", manifest_path(cfg))
    if missing:
        print(f"\nSolving {len(missing)} missing reference series...")
        result = solve_entries(manifest, manifest_path(cfg), missing, workers=cfg.threads)
        if result.failures:
            print(f"Warning: {len(result.failures)} reference solves failed and are left out.", file=sys.stderr)
        indices = [j for j in indices if manifest.entries[j].status == "done"]
    if not indices:
        raise SnapshotIOError("The manifest has no usable testing entries.", manifest_path(cfg))
    return indices


class ReferenceCache:
    """Reads each reference series once, sliced to the evaluated field."""

    def __init__(self, manifest: Manifest, field_name: Optional[str]):
        self.manifest = manifest
        self.field_name = field_name
        self._series: Dict[int, SnapshotSeries] = {}

    def __getitem__(self, index: int) -> SnapshotSeries:
        if index not in self._series:
            series = self.manifest.read(self.manifest.entries[index])
            self._series[index] = field_slice(series, self.field_name) if self.field_name else series
        return self._series[index]


# --- Prediction workers ---

_worker_state: Dict[str, object] = {}


def _init_worker(model, references: ReferenceCache) -> None:
    _worker_state.update(model=model, references=references)


def _evaluate_entry(index: int):
    """Pool worker: predicts one testing entry and measures its errors against the reference."""
    model, references = _worker_state["model"], _worker_state["references"]
    ref = references[index]
    try:
        pred = model.predict(ref.params, ref.times)
    except NumericalFailureError as e:
        return ref.params, ref.times, None, {}, str(e)
    fields = per_field_errors(pred, ref) if len(ref.field_layout) > 1 else {}
    return ref.params, ref.times, series_errors(pred, ref), fields, ""


def evaluate_model(model, references: ReferenceCache, indices: List[int], cfg: RunConfig, metadata: dict) -> Tuple[ErrorReport, Dict[str, ErrorReport]]:
    """
    Runs the convergence-averaged evaluation of one trained model. With a
    multi-field state the per-field errors of the same samples are reported
    alongside.

    Testing entries are predicted by a pool of `cfg.threads` workers; results
    are consumed in manifest order, so the convergence cut-off does not depend
    on the pool size.
    """
    field_rows: Dict[str, List[np.ndarray]] = {}
    times = None

    def stream(outcomes):
        nonlocal times
        for params, ref_times, errors, fields, failure in outcomes:
            if failure:
                raise NumericalFailureError(failure)
            times = ref_times
            for name, values in fields.items():
                field_rows.setdefault(name, []).append(values)
            yield params, errors

    pool_size = min(worker_count(cfg.threads), len(indices))
    if pool_size == 1:
        _init_worker(model, references)
        report = converged_param_average(stream(map(_evaluate_entry, indices)), cfg.threshold, metadata=metadata)
    else:
        with mp.Pool(processes=pool_size, initializer=_init_worker, initargs=(model, references)) as pool:
            report = converged_param_average(stream(pool.imap(_evaluate_entry, indices)), cfg.threshold, metadata=metadata)
    report = aggregate(report.per_time, report.params, times, report.metadata)

    per_field = {
        name: aggregate(np.vstack(rows[:report.samples_used]), report.params, times, {**metadata, "field": name})
        for name, rows in field_rows.items()
    }
    return report, per_field


def write_report(report: ErrorReport, out_dir: str, tag: str) -> None:
    report.to_csv(os.path.join(out_dir, f"errors_{tag}.csv"))
    report.ensemble_frame().to_csv(
        os.path.join(out_dir, f"ensemble_{tag}.csv"), index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n"
    )


def rank_table(summaries: List[dict], field_name: str = "both") -> pd.DataFrame:
    """Mean time-averaged error with one row per method and one column per rank."""
    frame = pd.DataFrame(summaries)
    frame = frame[frame["field"] == field_name]
    return frame.pivot_table(index="method", columns="rank", values="E_bar_mean", aggfunc="first")


# --- Main Execution Logic ---

def cmd_evaluate(cfg: RunConfig) -> Dict[Tuple[str, int], ErrorReport]:
    """
    Trains every requested method at every requested rank and evaluates it
    on the testing entries, writing per-sample, ensemble, summary and rank
    table CSVs under <out>/evaluate.
    """
    manifest, ts = load_training(cfg)
    indices = ensure_references(cfg, manifest)
    references = ReferenceCache(manifest, training_field(cfg))
    out_dir = os.path.join(cfg.out, EVAL_SUBDIR)
    os.makedirs(out_dir, exist_ok=True)

    print(f"\nTraining set: {len(ts)} series (stride {cfg.train_stride}), {len(indices)} testing entries, field {cfg.state_field}")
    reports, summaries = {}, []
    last_error = None
    for method in cfg.methods:
        for rank in cfg.ranks or [None]:
            label = f"{method} rank {rank if rank else 'auto'}"
            print(f"  - Running {label}...")
            start = time.time()
            try:
                model = fit_parametric(
                    method, ts, cfg.tau, rank,
                    num_neighbors=cfg.neighbors, init_coeffs=cfg.init_coeffs,
                    init_frame=cfg.init_frame, strict=cfg.strict, normalize_axes=cfg.normalize_axes,
                )
                metadata = {"method": method, "rank": model.rank, "field": cfg.state_field, "param_names": ts.param_names}
                report, per_field = evaluate_model(model, references, indices, cfg, metadata)
            except NumericalFailureError as e:
                print(f"    ERROR! ({e})", file=sys.stderr)
                last_error = e
                continue
            print(f"    done ({time.time() - start:.2f}s), <E> = {report.overall:.3e} over {report.samples_used} samples")

            tag = f"{method}_r{model.rank}"
            write_report(report, out_dir, tag)
            summaries.append(report.summary())
            for name, field_report in per_field.items():
                write_report(field_report, out_dir, f"{tag}_{name}")
                summaries.append(field_report.summary())
            reports[(method, model.rank)] = report

    if not reports:
        raise last_error or NumericalFailureError("No model could be evaluated.")
    summary = pd.DataFrame(summaries)
    summary.to_csv(os.path.join(out_dir, SUMMARY_CSV), index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    table = rank_table(summaries, cfg.state_field)
    table.to_csv(os.path.join(out_dir, RANK_TABLE_CSV), float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    print("\nMean time-averaged relative error (rows: method, columns: rank)")
    print(table.to_string(float_format=lambda v: f"{v:.3e}"))
    print(f"\nResults written to '{out_dir}'")
    return reports


if __name__ == '__main__':
    from run_pdmd import main
    sys.exit(main(["evaluate", *sys.argv[1:]]))
