# solvers/nonlinear_diffusion.py

import logging
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from dmd.snapshots import FieldSpan, SnapshotSeries
from solvers.grid import DirichletFace, GridSpec, ProblemParams, boundary_cells, diffusion_operator, upwind_operator
from util.errors import InvalidInputError, NumericalFailureError

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_GRID = GridSpec(dims=(64, 32), domain=((0.0, 2.0), (0.0, 1.0)), dt=0.01, t_end=1.0)
VELOCITY = (0.1, 0.0)
HEATED_SEGMENT_TOP = 0.2
WALL_TEMPERATURE = 1.0
PICARD_TOL = 1e-8
MAX_PICARD = 50


def conductivity(T: np.ndarray, a: float, b: float) -> np.ndarray:
    """k(T) = a + T**b, with T clipped at zero."""
    return a + np.maximum(T, 0.0) ** b


def heated_wall(grid: GridSpec) -> DirichletFace:
    """Dirichlet segment on the left wall, 0 <= y <= 0.2 (at least one cell)."""
    x, y = grid.centers()
    mask = y <= HEATED_SEGMENT_TOP
    cells = boundary_cells(grid, 0, 0, mask)
    if cells.size == 0:
        cells = boundary_cells(grid, 0, 0)[:1]
    return DirichletFace(axis=0, side=0, cells=cells, value=WALL_TEMPERATURE)


def solve_nonlinear_diffusion(
    p: ProblemParams,
    g: Optional[GridSpec] = None,
    velocity: Sequence[float] = VELOCITY,
    initial_value: float = 0.0,
    insulated: bool = False,
    picard_tol: float = PICARD_TOL,
    max_picard: int = MAX_PICARD,
    skip_initial: bool = True,
) -> SnapshotSeries:
    """
    Solves dT/dt + w . grad T = div(k(T) grad T) with k(T) = a + T^b by
    implicit Euler, lagging k(T) in a Picard loop each step.

    `insulated` removes the heated wall segment so every boundary is
    zero-flux. The default cold start is the zero state, so as for the jet
    `skip_initial` starts the recorded series one stride later, at
    t = snapshot_stride * dt.
    """
    g = g or DEFAULT_GRID
    if p.a <= 0:
        raise InvalidInputError(f"The conductivity offset a must be positive, got {p.a}.")
    if p.b < 0:
        raise InvalidInputError(f"The exponent b must be nonnegative, got {p.b}.")

    dirichlet = [] if insulated else [heated_wall(g)]
    advection, advection_source = upwind_operator(g, velocity, dirichlet)
    identity = sp.identity(g.num_cells, format="csr")

    T = np.full(g.num_cells, float(initial_value))
    snapshots = [] if skip_initial else [T.copy()]
    for step in range(1, g.num_steps + 1):
        T_old = T
        T_iter = T_old
        history = []
        for _ in range(max_picard):
            L, diffusion_source = diffusion_operator(g, conductivity(T_iter, p.a, p.b), dirichlet)
            M = identity + g.dt * (advection - L)
            T_new = spsolve(M.tocsc(), T_old + g.dt * (diffusion_source + advection_source))
            change = np.linalg.norm(T_new - T_iter) / max(np.linalg.norm(T_new), 1.0)
            history.append(float(change))
            T_iter = T_new
            if change < picard_tol:
                break
        else:
            raise NumericalFailureError(
                f"Picard iteration did not converge at step {step} (b={p.b}).",
                {"step": step, "t": step * g.dt, "residuals": history},
            )
        T = T_iter
        if step % g.snapshot_stride == 0:
            snapshots.append(T.copy())
        logger.debug("diffusion step %d: %d Picard iterations", step, len(history))

    if len(snapshots) < 3:
        raise InvalidInputError(f"The run records only {len(snapshots)} snapshots; at least 3 are needed.")
    return SnapshotSeries(
        np.array([p.b]),
        (np.arange(len(snapshots)) + int(skip_initial)) * (g.dt * g.snapshot_stride),
        np.column_stack(snapshots),
        (FieldSpan("T", 0, g.num_cells),),
    )
