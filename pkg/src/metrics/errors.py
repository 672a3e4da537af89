# metrics/errors.py

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dmd.snapshots import SnapshotSeries, field_slice
from util.errors import InvalidInputError, UndefinedMetricError

logger = logging.getLogger(__name__)

# --- Configuration ---
CONVERGENCE_THRESHOLD = 1e-3
CSV_FLOAT_FORMAT = "%.17g"


def relative_l2(pred, ref) -> float:
    """||pred - ref||_2 / ||ref||_2."""
    pred = np.asarray(pred, dtype=float).ravel()
    ref = np.asarray(ref, dtype=float).ravel()
    if pred.size != ref.size:
        raise InvalidInputError(f"Cannot compare vectors of length {pred.size} and {ref.size}.")
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise UndefinedMetricError("Relative L2 error is undefined for a zero reference state.")
    return float(np.linalg.norm(pred - ref) / norm)


def series_errors(pred: SnapshotSeries, ref: SnapshotSeries) -> np.ndarray:
    """E(t_i) for every shared snapshot column of a prediction and its reference."""
    if pred.states.shape != ref.states.shape:
        raise InvalidInputError(
            f"Prediction shape {pred.states.shape} does not match reference shape {ref.states.shape}."
        )
    return np.array([relative_l2(pred.states[:, i], ref.states[:, i]) for i in range(ref.num_snapshots)])


def per_field_errors(pred: SnapshotSeries, ref: SnapshotSeries) -> Dict[str, np.ndarray]:
    """Per-time errors of each physics field taken on its own."""
    return {
        name: series_errors(field_slice(pred, name), field_slice(ref, name))
        for name in ref.field_names
    }


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """
    Relative L2 errors E(t_i, mu_j) of one method/rank over a testing set,
    with the time average per parameter, the ensemble average per time and
    the overall mean.
    """
    per_time: np.ndarray
    per_param: np.ndarray
    ensemble_time: np.ndarray
    overall: float
    params: np.ndarray
    times: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)
    samples_used: int = 0

    @property
    def param_names(self) -> List[str]:
        names = self.metadata.get("param_names")
        return list(names) if names else [f"p{i}" for i in range(self.params.shape[1])]

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns (method, rank, <params...>, time, E)."""
        rows = []
        for j, theta in enumerate(self.params):
            for i, t in enumerate(self.times):
                row = {"method": self.metadata.get("method", ""), "rank": self.metadata.get("rank", "")}
                row.update(dict(zip(self.param_names, theta)))
                row.update({"time": t, "E": self.per_time[j, i]})
                rows.append(row)
        return pd.DataFrame(rows, columns=["method", "rank", *self.param_names, "time", "E"])

    def ensemble_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "E_mean": self.ensemble_time})

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.metadata.get("method", ""),
            "rank": self.metadata.get("rank", ""),
            "field": self.metadata.get("field", "both"),
            "samples": self.samples_used,
            "E_bar_mean": self.overall,
        }

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def aggregate(
    table,
    params=None,
    times=None,
    metadata: Optional[Dict[str, Any]] = None,
) -> ErrorReport:
    """
    Averages a (parameters x times) table of errors: over time per parameter,
    over parameters per time, and over both.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim == 1:
        table = table.reshape(1, -1)
    if table.ndim != 2 or table.size == 0:
        raise InvalidInputError("aggregate needs a non-empty rectangular error table.")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise InvalidInputError("Error tables must hold finite nonnegative values.")

    num_params, num_times = table.shape
    params = np.arange(num_params, dtype=float).reshape(-1, 1) if params is None else np.asarray(params, dtype=float)
    if params.ndim == 1:
        params = params.reshape(-1, 1)
    times = np.arange(num_times, dtype=float) if times is None else np.asarray(times, dtype=float).ravel()
    if params.shape[0] != num_params or times.size != num_times:
        raise InvalidInputError("Parameter and time labels must match the error table shape.")

    per_param = table.mean(axis=1)
    return ErrorReport(
        per_time=table,
        per_param=per_param,
        ensemble_time=table.mean(axis=0),
        overall=float(per_param.mean()),
        params=params,
        times=times,
        metadata=dict(metadata or {}),
        samples_used=num_params,
    )


def converged_param_average(
    stream: Iterable[Tuple[Sequence[float], Sequence[float]]],
    threshold: float = CONVERGENCE_THRESHOLD,
    times=None,
    metadata: Optional[Dict[str, Any]] = None,
    shuffle_seed: Optional[int] = None,
) -> ErrorReport:
    """
    Consumes (theta, per-time errors) pairs one at a time and stops once adding
    a sample changes the mean time-averaged error by a relative amount below
    `threshold`. A threshold of 0 consumes the whole stream. The stream is
    read lazily, so expensive reference solves stop with it.
    """
    if threshold < 0:
        raise InvalidInputError(f"threshold must be nonnegative, got {threshold}.")
    if shuffle_seed is not None:
        items = list(stream)
        order = np.random.default_rng(shuffle_seed).permutation(len(items))
        stream = [items[i] for i in order]

    params, rows = [], []
    previous = None
    for theta, errors in stream:
        params.append(np.atleast_1d(np.asarray(theta, dtype=float)))
        rows.append(np.asarray(errors, dtype=float).ravel())
        current = float(np.mean([row.mean() for row in rows]))
        if previous is not None and threshold > 0:
            change = abs(current - previous)
            if change == 0.0 or change < threshold * current:
                logger.info("converged_param_average: converged after %d samples", len(rows))
                break
        previous = current

    if not rows:
        raise InvalidInputError("The testing set is empty.")
    report = aggregate(np.vstack(rows), np.vstack(params), times, metadata)
    return report
