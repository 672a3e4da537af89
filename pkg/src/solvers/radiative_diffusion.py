# solvers/radiative_diffusion.py

import logging
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from dmd.snapshots import FieldSpan, SnapshotSeries
from solvers.grid import DirichletFace, GridSpec, ProblemParams, boundary_cells, diffusion_operator
from util.errors import InvalidInputError, NumericalFailureError

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_GRID = GridSpec(dims=(16, 16, 16), domain=((0.0, 1.0),) * 3, dt=0.005, t_end=1.0)
FULL_GRID = DEFAULT_GRID.with_overrides(dims=(32, 32, 32))
INCLUSIONS = (
    ((3 / 32, 7 / 32), (9 / 32, 13 / 32), (3 / 32, 7 / 32)),
    ((9 / 32, 13 / 32), (3 / 32, 7 / 32), (9 / 32, 13 / 32)),
)
CONDUCTION_SCALE = 1e-2
E_FLOOR = 1e-10
PICARD_TOL = 1e-7
MAX_PICARD = 100
MAX_HALVINGS = 5

PULSE_FLOOR = 0.001
PULSE_PEAK = 100.0
PULSE_WIDTH = 100.0


def initial_radiation(r2: np.ndarray) -> np.ndarray:
    return PULSE_FLOOR + PULSE_PEAK * np.exp(-PULSE_WIDTH * r2)


def initial_temperature(r2: np.ndarray) -> np.ndarray:
    return PULSE_FLOOR + PULSE_PEAK * np.exp(-PULSE_WIDTH * r2) ** 0.25


def absorption(T: np.ndarray, Z, alpha) -> np.ndarray:
    """sigma_a = Z^alpha / T^alpha."""
    return np.power(Z, alpha) / np.power(T, alpha)


def conduction(T: np.ndarray) -> np.ndarray:
    return CONDUCTION_SCALE * np.power(T, 2.5)


def inclusion_mask(grid: GridSpec) -> np.ndarray:
    """Cells whose centres lie inside one of the two high-Z cubes (flattened)."""
    centers = grid.centers()
    mask = np.zeros(grid.dims, dtype=bool)
    for box in INCLUSIONS:
        inside = np.ones(grid.dims, dtype=bool)
        for coord, (lo, hi) in zip(centers, box):
            inside &= (coord >= lo) & (coord <= hi)
        mask |= inside
    return mask.ravel()


def material_maps(p: ProblemParams, grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell Z and alpha: the inclusions carry p.Z and p.alpha, the background its own values."""
    inside = inclusion_mask(grid)
    Z = np.where(inside, p.Z, p.background_Z)
    alpha = np.where(inside, p.alpha, p.background_alpha)
    return Z, alpha


def radiation_diffusivity(E: np.ndarray, sigma: np.ndarray, grid: GridSpec) -> np.ndarray:
    """D_r = 1 / (3 sigma_a + |grad E| / E), E floored in the quotient."""
    gradients = np.gradient(E.reshape(grid.dims), *grid.spacing)
    magnitude = np.sqrt(sum(component ** 2 for component in gradients)).ravel()
    return 1.0 / (3.0 * sigma + magnitude / np.maximum(E, E_FLOOR))


def vacuum_faces(grid: GridSpec) -> List[DirichletFace]:
    """E = 0 on the three faces opposite the reflective ones."""
    return [DirichletFace(axis, 1, boundary_cells(grid, axis, 1), 0.0) for axis in range(grid.ndim)]


class RadiativeDiffusion:
    """
    Coupled material temperature / radiation energy diffusion:

        dT/dt - div(D_T grad T) = -sigma_a (T^4 - E)
        dE/dt - div(D_r grad E) = +sigma_a (T^4 - E)

    Each implicit step lags sigma_a, D_T, D_r and T^3 (in T^4 ~ T*^3 T) in a
    Picard loop. A step that fails to converge or loses positivity is retried
    as two half steps, up to MAX_HALVINGS levels deep.
    """

    def __init__(
        self,
        p: ProblemParams,
        g: Optional[GridSpec] = None,
        emission_power: float = 4.0,
        vacuum: bool = True,
        picard_tol: float = PICARD_TOL,
        max_picard: int = MAX_PICARD,
    ):
        self.p = p
        self.g = g or DEFAULT_GRID
        if self.g.ndim != 3:
            raise InvalidInputError("The radiative problem needs a 3-D grid.")
        if p.Z < 1 or p.alpha <= 0:
            raise InvalidInputError(f"Need Z >= 1 and alpha > 0, got Z={p.Z}, alpha={p.alpha}.")
        self.emission_power = emission_power
        self.picard_tol = picard_tol
        self.max_picard = max_picard
        self.Z, self.alpha = material_maps(p, self.g)
        self.faces = vacuum_faces(self.g) if vacuum else []
        self.identity = sp.identity(self.g.num_cells, format="csr")
        self.halvings = 0

    def initial_state(self) -> Tuple[np.ndarray, np.ndarray]:
        r2 = sum(c ** 2 for c in self.g.centers()).ravel()
        return initial_temperature(r2), initial_radiation(r2)

    def _implicit_step(self, T_old: np.ndarray, E_old: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        T_k, E_k = T_old, E_old
        history = []
        for _ in range(self.max_picard):
            sigma = absorption(T_k, self.Z, self.alpha)
            emission = sigma * np.power(T_k, self.emission_power - 1.0)
            L_T, _ = diffusion_operator(self.g, conduction(T_k))
            L_E, source = diffusion_operator(self.g, radiation_diffusivity(E_k, sigma, self.g), self.faces)
            M = sp.bmat(
                [
                    [self.identity / dt - L_T + sp.diags(emission), -sp.diags(sigma)],
                    [-sp.diags(emission), self.identity / dt - L_E + sp.diags(sigma)],
                ],
                format="csc",
            )
            x = spsolve(M, np.concatenate([T_old / dt, E_old / dt + source]))
            if not np.all(np.isfinite(x)) or np.min(x) <= 0.0:
                raise NumericalFailureError(
                    "Radiative step produced non-positive or non-finite values.",
                    {"dt": dt, "picard_iterations": len(history) + 1, "min": float(np.nanmin(x))},
                )
            previous = np.concatenate([T_k, E_k])
            change = float(np.linalg.norm(x - previous) / np.linalg.norm(x))
            history.append(change)
            T_k, E_k = x[:self.g.num_cells], x[self.g.num_cells:]
            if change < self.picard_tol:
                return T_k, E_k
        raise NumericalFailureError(
            f"Picard iteration did not converge within {self.max_picard} iterations.",
            {"dt": dt, "residuals": history},
        )

    def advance(self, T: np.ndarray, E: np.ndarray, dt: float, depth: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        try:
            return self._implicit_step(T, E, dt)
        except NumericalFailureError as e:
            if depth >= MAX_HALVINGS:
                raise NumericalFailureError(
                    f"Radiative step failed after {depth} time-step halvings: {e}",
                    {**e.diagnostics, "halvings": depth},
                ) from e
            logger.info("radiative step rejected at dt=%g (%s); halving", dt, e)
            self.halvings += 1
            T, E = self.advance(T, E, dt / 2.0, depth + 1)
            return self.advance(T, E, dt / 2.0, depth + 1)

    def run(self) -> SnapshotSeries:
        g = self.g
        T, E = self.initial_state()
        snapshots = [np.concatenate([T, E])]
        for step in range(1, g.num_steps + 1):
            try:
                T, E = self.advance(T, E, g.dt)
            except NumericalFailureError as e:
                e.diagnostics.update(step=step, t=step * g.dt)
                raise
            if step % g.snapshot_stride == 0:
                snapshots.append(np.concatenate([T, E]))
        logger.info("radiative Z=%g alpha=%g: %d steps, %d halvings", self.p.Z, self.p.alpha, g.num_steps, self.halvings)

        N = g.num_cells
        diagnostics = (f"time-step halvings: {self.halvings}",) if self.halvings else ()
        return SnapshotSeries(
            np.array([self.p.Z]),
            g.snapshot_times,
            np.column_stack(snapshots),
            (FieldSpan("T", 0, N), FieldSpan("E", N, N)),
            diagnostics,
        )


def solve_radiative_diffusion(p: ProblemParams, g: Optional[GridSpec] = None, **options) -> SnapshotSeries:
    return RadiativeDiffusion(p, g, **options).run()
