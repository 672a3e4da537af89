# solvers/incident_jet.py

import logging
import warnings
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from dmd.snapshots import FieldSpan, SnapshotSeries
from solvers.grid import GridSpec, ProblemParams, diffusion_operator, fix_cells, upwind_operator
from util.errors import InvalidInputError, StabilityWarning

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_GRID = GridSpec(dims=(64, 64), domain=((0.0, 5.0), (0.0, 5.0)), dt=0.005, t_end=2.0)
VELOCITY = (5.0, 5.0)
CORNER_EXTENT = 0.1


def jet_boundary_value(t: float) -> float:
    return float(np.sin(10.0 * np.pi * t))


def corner_cells(grid: GridSpec) -> np.ndarray:
    """Cells with centres in x < 0.1, y < 0.1; at least the corner cell itself."""
    x, y = grid.centers()
    cells = np.flatnonzero(((x < CORNER_EXTENT) & (y < CORNER_EXTENT)).ravel())
    return cells if cells.size else np.array([0])


def cfl_number(grid: GridSpec, velocity: Sequence[float]) -> float:
    return float(grid.dt * sum(abs(w) / h for w, h in zip(velocity, grid.spacing)))


def solve_incident_jet(
    p: ProblemParams,
    g: Optional[GridSpec] = None,
    velocity: Sequence[float] = VELOCITY,
    boundary_value: Callable[[float], float] = jet_boundary_value,
    initial_value: float = 0.0,
    implicit_advection: bool = True,
    skip_initial: bool = True,
) -> SnapshotSeries:
    """
    Solves dT/dt + w . grad T = div(k grad T) with the bottom-left corner cells
    held at `boundary_value(t)` and zero flux elsewhere.

    With `implicit_advection=False` the upwind term is taken explicitly and a
    CFL number above 1 is reported as a StabilityWarning.

    The jet starts from a state at rest, which leaves nothing for b0 = pinv(Phi) y0
    to project; with `skip_initial` the recorded series starts one stride
    later, at t = snapshot_stride * dt.
    """
    g = g or DEFAULT_GRID
    if p.k <= 0:
        raise InvalidInputError(f"The conductivity k must be positive, got {p.k}.")

    diagnostics = ()
    L, _ = diffusion_operator(g, np.full(g.num_cells, p.k))
    advection, _ = upwind_operator(g, velocity)
    if not implicit_advection:
        cfl = cfl_number(g, velocity)
        if cfl > 1.0:
            message = f"explicit upwind advection with CFL number {cfl:.3f} > 1"
            warnings.warn(message, StabilityWarning, stacklevel=2)
            diagnostics = (message,)
    identity = sp.identity(g.num_cells, format="csr")
    M = identity - g.dt * L
    if implicit_advection:
        M = M + g.dt * advection
    corner = corner_cells(g)
    system, _ = fix_cells(M, np.zeros(g.num_cells), corner, 0.0)
    solver = splu(system.tocsc())

    T = np.full(g.num_cells, float(initial_value))
    T[corner] = boundary_value(0.0)
    snapshots = [] if skip_initial else [T.copy()]
    for step in range(1, g.num_steps + 1):
        t = step * g.dt
        rhs = T.copy() if implicit_advection else T - g.dt * (advection @ T)
        rhs[corner] = boundary_value(t)
        T = solver.solve(rhs)
        if step % g.snapshot_stride == 0:
            snapshots.append(T.copy())
    logger.debug("jet k=%g: %d steps", p.k, g.num_steps)

    if len(snapshots) < 3:
        raise InvalidInputError(f"The run records only {len(snapshots)} snapshots; at least 3 are needed.")
    return SnapshotSeries(
        np.array([p.k]),
        (np.arange(len(snapshots)) + int(skip_initial)) * (g.dt * g.snapshot_stride),
        np.column_stack(snapshots),
        (FieldSpan("T", 0, g.num_cells),),
        diagnostics,
    )
