# dmd/classical.py

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from dmd.snapshots import SnapshotSeries, validate_series
from util.errors import (
    ImaginaryResidueWarning,
    InvalidInputError,
    NumericalFailureError,
    RankDeficiencyError,
)
from util.linalg import EigenPair, SvdFactors, eig_general, pinv, thin_svd

logger = logging.getLogger(__name__)

# --- Configuration ---
DEFAULT_TAU = 0.9999
RANK_DEFICIENCY_TOL = 1e-14
IMAGINARY_RESIDUE_TOL = 1e-6
INTEGER_EXPONENT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DmdModel:
    """
    Linear surrogate y(t) = Re(Phi @ diag(Lambda ** ((t - t0) / dt)) @ b0).

    `t0` is the time of the initial snapshot the coefficients were fitted to.
    """
    modes: np.ndarray
    eigenvalues: np.ndarray
    init_coeffs: np.ndarray
    dt: float
    diagnostics: Tuple[str, ...] = field(default=())
    t0: float = 0.0

    @property
    def rank(self) -> int:
        return self.eigenvalues.size


def split_snapshots(series: SnapshotSeries) -> Tuple[np.ndarray, np.ndarray]:
    """Returns the lagged (columns 0..m-1) and forward (columns 1..m) snapshot matrices."""
    states = series.states if isinstance(series, SnapshotSeries) else np.asarray(series)
    if states.ndim != 2 or states.shape[1] < 3:
        raise InvalidInputError(f"Need at least 3 snapshot columns to split, got shape {states.shape}.")
    return states[:, :-1], states[:, 1:]


def select_rank(sigma: Sequence[float], tau: float, r_max: Optional[int] = None) -> int:
    """
    Smallest r whose leading singular values hold at least a fraction tau of
    the total, clamped to r_max. An all-zero spectrum yields rank 1.
    """
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size == 0:
        raise InvalidInputError("select_rank needs a non-empty singular value list.")
    if not 0.0 < tau <= 1.0:
        raise InvalidInputError(f"tau must lie in (0, 1], got {tau}.")
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 0):
        raise InvalidInputError("Singular values must be nonnegative and nonincreasing.")

    total = sigma.sum()
    if total == 0.0:
        return 1
    fraction = np.cumsum(sigma) / total
    fraction[-1] = 1.0
    r = int(np.argmax(fraction >= tau)) + 1
    if r_max is not None:
        r = min(r, int(r_max))
    return max(r, 1)


def reduced_koopman(svd: SvdFactors, forward: np.ndarray, r: int) -> np.ndarray:
    """A_r = U_r^T S+ V_r Sigma_r^-1, the r x r reduced Koopman operator."""
    if r < 1 or r > svd.rank_capacity:
        raise InvalidInputError(f"Rank {r} outside the available 1..{svd.rank_capacity}.")
    sigma = svd.sigma[:r]
    tiny = np.flatnonzero(sigma < RANK_DEFICIENCY_TOL * svd.sigma[0])
    if tiny.size or svd.sigma[0] == 0.0:
        index = int(tiny[0]) if tiny.size else 0
        raise RankDeficiencyError(
            f"Singular value {index} ({svd.sigma[index]:.3e}) is numerically zero; "
            f"rank {r} is not supported by the data.",
            index=index,
        )
    return (svd.U[:, :r].T @ forward @ svd.V[:, :r]) / sigma


def modes_and_coefficients(U_r: np.ndarray, eig: EigenPair, y0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Phi = U_r W and b0 = Phi^+ y0."""
    modes = U_r @ eig.vectors
    return modes, pinv(modes) @ y0


def fit_dmd(series: SnapshotSeries, tau: float = DEFAULT_TAU, r_override: Optional[int] = None) -> DmdModel:
    """
    Classical DMD of one snapshot series: split, thin SVD of the lagged
    matrix, rank selection (or override), reduced Koopman operator,
    eigendecomposition, modes and initial coefficients.
    """
    validate_series(series)
    lagged, forward = split_snapshots(series)
    svd = thin_svd(lagged)

    if r_override is not None:
        if r_override < 1 or r_override > svd.rank_capacity:
            raise InvalidInputError(
                f"Requested rank {r_override} exceeds the {svd.rank_capacity} available singular values."
            )
        r = int(r_override)
    else:
        r = select_rank(svd.sigma, tau)
    logger.debug("fit_dmd: rank %d of %d (tau=%s)", r, svd.rank_capacity, tau)

    koopman = reduced_koopman(svd, forward, r)
    eig = eig_general(koopman)
    modes, b0 = modes_and_coefficients(svd.U[:, :r], eig, series.initial_state)
    return DmdModel(modes, eig.values, b0, series.dt, eig.diagnostics, float(series.times[0]))


def eigenvalue_powers(eigenvalues: np.ndarray, exponent: float) -> np.ndarray:
    """Lambda ** exponent, as an integer power when the exponent is integral."""
    eigenvalues = np.asarray(eigenvalues, dtype=complex)
    k = round(exponent)
    if abs(exponent - k) <= INTEGER_EXPONENT_TOL * max(1.0, abs(exponent)):
        return eigenvalues ** int(k)
    if np.any(eigenvalues == 0):
        raise InvalidInputError(f"Zero eigenvalue cannot be raised to the non-integer power {exponent}.")
    return np.exp(exponent * np.log(eigenvalues))


def _evaluate(model: DmdModel, t: float) -> Tuple[np.ndarray, float, float]:
    elapsed = t - model.t0
    if elapsed < -INTEGER_EXPONENT_TOL * model.dt:
        raise InvalidInputError(f"Reconstruction time {t} precedes the initial snapshot at t0={model.t0}.")
    state = model.modes @ (model.init_coeffs * eigenvalue_powers(model.eigenvalues, max(elapsed, 0.0) / model.dt))
    residue = float(np.linalg.norm(state.imag))
    # States that decay to round-off are judged against the initial state's size.
    floor = 1e-12 * float(np.linalg.norm(model.modes @ model.init_coeffs))
    scale = max(float(np.linalg.norm(state.real)), floor)
    return state.real, residue, scale


def _residue_breach(residue: float, scale: float, t: float, strict: bool):
    message = f"imaginary residue {residue:.3e} at t={t:g} exceeds tolerance (|Re|={scale:.3e})"
    if strict:
        raise NumericalFailureError(message, {"t": t, "residue": residue, "norm": scale})
    warnings.warn(message, ImaginaryResidueWarning, stacklevel=3)
    return message


def reconstruct(model: DmdModel, t: float, strict: bool = True, return_residue: bool = False):
    """
    Evaluates the model state at time t >= t0.

    The imaginary part of Phi Lambda^((t - t0)/dt) b0 must stay below
    1e-6 * ||Re||; a breach raises NumericalFailureError when `strict`,
    otherwise it is reported with an ImaginaryResidueWarning.
    """
    real, residue, scale = _evaluate(model, t)
    if residue > IMAGINARY_RESIDUE_TOL * scale:
        _residue_breach(residue, scale, t, strict)
    if return_residue:
        return real, residue
    return real


def reconstruct_states(model: DmdModel, times: Sequence[float], strict: bool = True) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """
    Reconstructs one state column per time. Returns the state matrix and the
    diagnostics produced (at most one residue message for the whole series).
    """
    times = np.asarray(times, dtype=float).ravel()
    states = np.empty((model.modes.shape[0], times.size))
    worst = None
    for i, t in enumerate(times):
        states[:, i], residue, scale = _evaluate(model, t)
        if residue > IMAGINARY_RESIDUE_TOL * scale and (worst is None or residue / scale > worst[0] / worst[1]):
            worst = (residue, scale, t)
    if worst is None:
        return states, ()
    return states, (_residue_breach(*worst, strict),)
