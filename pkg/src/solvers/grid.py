# solvers/grid.py

import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from util.errors import InvalidInputError, ParameterRangeWarning

# --- Configuration ---
MIN_CELLS_PER_AXIS = 4

# Studied parameter ranges; values outside them are accepted with a warning.
PARAM_RANGES = {
    "b": (0.0, 4.0),
    "k": (0.2, 5.0),
    "Z": (1.0, 15.0),
    "alpha": (2.5, 3.5),
}

BoundaryValue = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid plus the time window and snapshot stride of a run."""
    dims: Tuple[int, ...]
    domain: Tuple[Tuple[float, float], ...]
    dt: float
    t_end: float
    snapshot_stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "domain", tuple((float(lo), float(hi)) for lo, hi in self.domain))
        if len(self.dims) not in (2, 3) or len(self.domain) != len(self.dims):
            raise InvalidInputError(f"Grids are 2-D or 3-D with one interval per axis, got {self.dims} / {self.domain}.")
        if min(self.dims) < MIN_CELLS_PER_AXIS:
            raise InvalidInputError(f"Every axis needs at least {MIN_CELLS_PER_AXIS} cells, got {self.dims}.")
        if any(hi <= lo for lo, hi in self.domain):
            raise InvalidInputError(f"Domain intervals must be increasing, got {self.domain}.")
        if self.dt <= 0 or self.t_end < self.dt:
            raise InvalidInputError(f"Need dt > 0 and t_end >= dt, got dt={self.dt}, t_end={self.t_end}.")
        if self.snapshot_stride < 1:
            raise InvalidInputError("snapshot_stride must be at least 1.")
        if self.num_steps // self.snapshot_stride < 2:
            raise InvalidInputError("The run must record at least 3 snapshots.")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def num_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.domain, self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def num_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def snapshot_times(self) -> np.ndarray:
        count = self.num_steps // self.snapshot_stride + 1
        return np.arange(count) * (self.dt * self.snapshot_stride)

    def centers(self) -> List[np.ndarray]:
        """Cell-centre coordinates per axis, each shaped like the grid."""
        axes = [lo + (np.arange(n) + 0.5) * h for (lo, _), n, h in zip(self.domain, self.dims, self.spacing)]
        return np.meshgrid(*axes, indexing="ij")

    def with_overrides(self, **changes) -> "GridSpec":
        values = dict(dims=self.dims, domain=self.domain, dt=self.dt, t_end=self.t_end,
                      snapshot_stride=self.snapshot_stride)
        values.update({k: v for k, v in changes.items() if v is not None})
        return GridSpec(**values)

    def to_fields(self) -> Dict[str, str]:
        return {
            "dims": ",".join(str(d) for d in self.dims),
            "domain": ",".join(f"{lo!r}:{hi!r}" for lo, hi in self.domain),
            "dt": repr(self.dt),
            "t_end": repr(self.t_end),
            "stride": str(self.snapshot_stride),
        }

    @classmethod
    def from_fields(cls, fields: Dict[str, str]) -> "GridSpec":
        try:
            return cls(
                dims=tuple(int(d) for d in fields["dims"].split(",")),
                domain=tuple(tuple(float(v) for v in pair.split(":")) for pair in fields["domain"].split(",")),
                dt=float(fields["dt"]),
                t_end=float(fields["t_end"]),
                snapshot_stride=int(fields.get("stride", "1")),
            )
        except (KeyError, ValueError) as e:
            raise InvalidInputError(f"Malformed grid description {fields}: {e}") from e


@dataclass(frozen=True)
class ProblemParams:
    """Physical parameters of one solver run."""
    problem: str
    a: float = 0.01
    b: float = 1.0
    k: float = 1.0
    Z: float = 1.0
    alpha: float = 3.0
    background_Z: float = 1.0
    background_alpha: float = 3.0

    @classmethod
    def from_values(cls, problem: str, names: Sequence[str], values: Sequence[float], strict_ranges: bool = False) -> "ProblemParams":
        try:
            params = cls(problem, **{name: float(v) for name, v in zip(names, values)})
        except TypeError as e:
            raise InvalidInputError(f"Unknown parameter among {list(names)} for problem '{problem}'.") from e
        params.check_ranges(names, strict_ranges)
        return params

    def check_ranges(self, names: Sequence[str], strict: bool = False) -> None:
        for name in names:
            lo, hi = PARAM_RANGES.get(name, (-np.inf, np.inf))
            value = getattr(self, name)
            if not lo <= value <= hi:
                message = f"{name}={value} lies outside the studied range [{lo}, {hi}]"
                if strict:
                    raise InvalidInputError(message)
                warnings.warn(message, ParameterRangeWarning, stacklevel=2)


# --- Finite-volume assembly ---

@dataclass(frozen=True)
class DirichletFace:
    """Boundary faces on `side` (0 low, 1 high) of `axis` adjacent to `cells`, held at `value`."""
    axis: int
    side: int
    cells: np.ndarray
    value: BoundaryValue = 0.0

    def at(self, t: float) -> float:
        return float(self.value(t)) if callable(self.value) else float(self.value)


def boundary_cells(grid: GridSpec, axis: int, side: int, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Flat indices of the cells touching one face of the domain, optionally filtered by a cell mask."""
    index = np.arange(grid.num_cells).reshape(grid.dims)
    layer = [slice(None)] * grid.ndim
    layer[axis] = 0 if side == 0 else grid.dims[axis] - 1
    selected = np.zeros(grid.dims, dtype=bool)
    selected[tuple(layer)] = True
    if mask is not None:
        selected &= mask
    return index[selected]


def _face_neighbors(grid: GridSpec, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    index = np.arange(grid.num_cells).reshape(grid.dims)
    n = grid.dims[axis]
    lower = np.take(index, np.arange(n - 1), axis=axis).ravel()
    upper = np.take(index, np.arange(1, n), axis=axis).ravel()
    return lower, upper


def harmonic_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    total = a + b
    out = np.zeros_like(total, dtype=float)
    positive = total > 0
    out[positive] = 2.0 * a[positive] * b[positive] / total[positive]
    return out


def diffusion_operator(
    grid: GridSpec,
    coefficient: np.ndarray,
    dirichlet: Sequence[DirichletFace] = (),
    t: float = 0.0,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """
    Cell-centred discretization of div(D grad u) with harmonic-mean face
    coefficients: returns (L, g) with L u + g approximating the operator.
    Faces not listed in `dirichlet` carry zero flux.
    """
    D = np.broadcast_to(np.asarray(coefficient, dtype=float).ravel(), (grid.num_cells,))
    rows, cols, vals = [], [], []
    diagonal = np.zeros(grid.num_cells)
    for axis, h in enumerate(grid.spacing):
        lower, upper = _face_neighbors(grid, axis)
        c = harmonic_mean(D[lower], D[upper]) / h ** 2
        rows += [lower, upper]
        cols += [upper, lower]
        vals += [c, c]
        np.subtract.at(diagonal, lower, c)
        np.subtract.at(diagonal, upper, c)

    g = np.zeros(grid.num_cells)
    for face in dirichlet:
        c = 2.0 * D[face.cells] / grid.spacing[face.axis] ** 2
        np.subtract.at(diagonal, face.cells, c)
        np.add.at(g, face.cells, c * face.at(t))

    cells = np.arange(grid.num_cells)
    L = sp.coo_matrix(
        (np.concatenate(vals + [diagonal]), (np.concatenate(rows + [cells]), np.concatenate(cols + [cells]))),
        shape=(grid.num_cells, grid.num_cells),
    ).tocsr()
    return L, g


def upwind_operator(
    grid: GridSpec,
    velocity: Sequence[float],
    dirichlet: Sequence[DirichletFace] = (),
    t: float = 0.0,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """
    First-order upwind discretization of w . grad u for a constant velocity:
    returns (A, g) with A u - g approximating the advection term. Inflow faces
    listed in `dirichlet` use a ghost value mirrored about the boundary value;
    other inflow faces have zero gradient.
    """
    rows, cols, vals = [], [], []
    g = np.zeros(grid.num_cells)
    for axis, (w, h) in enumerate(zip(velocity, grid.spacing)):
        if w == 0:
            continue
        lower, upper = _face_neighbors(grid, axis)
        down, up = (upper, lower) if w > 0 else (lower, upper)
        c = abs(w) / h
        rows += [down, down]
        cols += [down, up]
        vals += [np.full(down.size, c), np.full(down.size, -c)]

        inflow_side = 0 if w > 0 else 1
        for face in dirichlet:
            if face.axis == axis and face.side == inflow_side:
                rows.append(face.cells)
                cols.append(face.cells)
                vals.append(np.full(face.cells.size, 2.0 * c))
                np.add.at(g, face.cells, 2.0 * c * face.at(t))

    if not rows:
        return sp.csr_matrix((grid.num_cells, grid.num_cells)), g
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.num_cells, grid.num_cells),
    ).tocsr()
    return A, g


def fix_cells(M: sp.spmatrix, rhs: np.ndarray, cells: np.ndarray, value: float) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Replaces the equations of `cells` by u = value."""
    fixed = np.zeros(M.shape[0])
    fixed[cells] = 1.0
    M = sp.diags(1.0 - fixed) @ M + sp.diags(fixed)
    rhs = rhs.copy()
    rhs[cells] = value
    return M.tocsr(), rhs


def dirichlet_flux(grid: GridSpec, coefficient: np.ndarray, u: np.ndarray, dirichlet: Sequence[DirichletFace], t: float = 0.0) -> float:
    """Total diffusive inflow through the Dirichlet faces (per unit time)."""
    D = np.broadcast_to(np.asarray(coefficient, dtype=float).ravel(), (grid.num_cells,))
    total = 0.0
    for face in dirichlet:
        h = grid.spacing[face.axis]
        area = grid.cell_volume / h
        total += float(np.sum(2.0 * D[face.cells] / h * (face.at(t) - u[face.cells]) * area))
    return total
