# dmd/snapshots.py

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from util.errors import InvalidInputError

TIME_GRID_TOL = 1e-12


@dataclass(frozen=True)
class FieldSpan:
    """Rows [offset, offset + length) of a state column hold one physics field."""
    name: str
    offset: int
    length: int


@dataclass(frozen=True, eq=False)
class SnapshotSeries:
    """
    One parameter realization's trajectory.

    Column i of `states` is the full-order state y(t_i). `field_layout`
    describes how coupled fields (e.g. T then E) are packed into each column.
    """
    params: np.ndarray
    times: np.ndarray
    states: np.ndarray
    field_layout: Tuple[FieldSpan, ...] = ()
    diagnostics: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "params", np.atleast_1d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float).ravel())
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        object.__setattr__(self, "states", states)
        if not self.field_layout:
            object.__setattr__(self, "field_layout", (FieldSpan("u", 0, states.shape[0]),))
        else:
            object.__setattr__(self, "field_layout", tuple(self.field_layout))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def num_snapshots(self) -> int:
        return self.states.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def field_names(self) -> List[str]:
        return [span.name for span in self.field_layout]

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[:, 0]


def validate_series(series: SnapshotSeries) -> SnapshotSeries:
    """
    Checks the ingestion invariants: at least three snapshots, a uniform
    strictly increasing time grid, finite states and a field layout that
    partitions the state rows. Returns the series unchanged.
    """
    if series.n < 1:
        raise InvalidInputError("A snapshot series needs at least one state row.")
    if series.num_snapshots < 3:
        raise InvalidInputError(
            f"A snapshot series needs at least 3 snapshots, got {series.num_snapshots}."
        )
    if series.times.size != series.num_snapshots:
        raise InvalidInputError(
            f"{series.times.size} times given for {series.num_snapshots} snapshot columns."
        )
    steps = np.diff(series.times)
    dt = steps[0]
    if dt <= 0 or np.any(steps <= 0):
        raise InvalidInputError("Snapshot times must be strictly increasing.")
    if np.max(np.abs(steps - dt)) >= TIME_GRID_TOL * dt:
        raise InvalidInputError(
            "Snapshot times are not uniformly spaced; non-uniform grids are not supported."
        )
    if not np.all(np.isfinite(series.states)):
        raise InvalidInputError("Snapshot states contain non-finite values.")

    covered = 0
    for span in sorted(series.field_layout, key=lambda s: s.offset):
        if span.offset != covered or span.length < 1:
            raise InvalidInputError(f"Field layout does not partition the state rows at '{span.name}'.")
        covered += span.length
    if covered != series.n:
        raise InvalidInputError(f"Field layout covers {covered} rows but states have {series.n}.")
    return series


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Snapshot series at distinct training parameters with a shared shape and time grid."""
    series: Tuple[SnapshotSeries, ...]
    param_names: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        if not self.series:
            raise InvalidInputError("A training set needs at least one series.")
        for s in self.series:
            validate_series(s)

        first = self.series[0]
        for j, s in enumerate(self.series[1:], start=1):
            if s.n != first.n or s.num_snapshots != first.num_snapshots:
                raise InvalidInputError(
                    f"Series {j} has shape {s.states.shape}, expected {first.states.shape}."
                )
            if abs(s.dt - first.dt) >= TIME_GRID_TOL * first.dt:
                raise InvalidInputError(f"Series {j} uses dt={s.dt}, expected {first.dt}.")
            if abs(s.times[0] - first.times[0]) >= TIME_GRID_TOL * first.dt:
                raise InvalidInputError(f"Series {j} starts at t={s.times[0]}, expected {first.times[0]}.")
            if s.field_layout != first.field_layout:
                raise InvalidInputError(f"Series {j} has a different field layout.")
            if s.params.size != first.params.size:
                raise InvalidInputError(f"Series {j} has {s.params.size} parameters, expected {first.params.size}.")

        params = self.params
        if np.unique(params, axis=0).shape[0] != params.shape[0]:
            raise InvalidInputError("Training parameter vectors must be pairwise distinct.")
        if not self.param_names:
            object.__setattr__(self, "param_names", tuple(f"p{i}" for i in range(self.param_dim)))

    def __len__(self) -> int:
        return len(self.series)

    @property
    def params(self) -> np.ndarray:
        return np.vstack([s.params for s in self.series])

    @property
    def param_dim(self) -> int:
        return self.series[0].params.size

    @property
    def n(self) -> int:
        return self.series[0].n

    @property
    def dt(self) -> float:
        return self.series[0].dt

    @property
    def times(self) -> np.ndarray:
        return self.series[0].times

    @property
    def t0(self) -> float:
        return float(self.series[0].times[0])

    @property
    def field_layout(self) -> Tuple[FieldSpan, ...]:
        return self.series[0].field_layout

    def subset(self, indices: Sequence[int]) -> "TrainingSet":
        return TrainingSet(tuple(self.series[i] for i in indices), self.param_names)


def field_slice(series: SnapshotSeries, name: str) -> SnapshotSeries:
    """Restricts a series to the rows of one physics field."""
    for span in series.field_layout:
        if span.name == name:
            return replace(
                series,
                states=series.states[span.offset:span.offset + span.length, :].copy(),
                field_layout=(FieldSpan(name, 0, span.length),),
            )
    raise InvalidInputError(f"Unknown field '{name}'; available: {series.field_names}.")


def slice_training_set(ts: TrainingSet, name: str) -> TrainingSet:
    return TrainingSet(tuple(field_slice(s, name) for s in ts.series), ts.param_names)


def interleave_fields(parts: Sequence[SnapshotSeries], template: Optional[SnapshotSeries] = None) -> SnapshotSeries:
    """
    Re-packs single-field series into one coupled series, in the given order
    (or in the order of `template`'s layout when one is supplied).
    """
    if not parts:
        raise InvalidInputError("interleave_fields needs at least one part.")
    by_name = {p.field_layout[0].name: p for p in parts}
    order = [span.name for span in template.field_layout] if template else list(by_name)

    blocks, layout, offset = [], [], 0
    for name in order:
        part = by_name[name]
        blocks.append(part.states)
        layout.append(FieldSpan(name, offset, part.n))
        offset += part.n
    first = parts[0]
    return SnapshotSeries(first.params, first.times, np.vstack(blocks), tuple(layout))
