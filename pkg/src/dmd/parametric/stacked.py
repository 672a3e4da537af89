# dmd/parametric/stacked.py

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from dmd.classical import DEFAULT_TAU, DmdModel, reduced_koopman, select_rank, split_snapshots
from dmd.parametric.param_base import ParametricDmd, blend
from dmd.snapshots import SnapshotSeries, TrainingSet
from util.errors import InvalidInputError, ResourceError
from util.linalg import eig_general, pinv, thin_svd

logger = logging.getLogger(__name__)

# --- Configuration ---
MEMORY_CAP_BYTES = 4 * 1024 ** 3
INIT_COEFF_MODES = ("per-parameter", "global")


def stacked_memory_estimate(num_series: int, n: int, num_snapshots: int) -> int:
    """Bytes held by the stacked matrix, its lagged copy and the left singular vectors."""
    return 8 * num_series * n * num_snapshots * 3


class StackedDmd(ParametricDmd):
    """
    Parametric DMD by snapshot stacking.

    All training series share one eigenvalue list. Predictions interpolate the
    per-parameter mode blocks and initial coefficients.
    """
    variant = "stacked"

    def __init__(
        self,
        mode_blocks: np.ndarray,
        eigenvalues: np.ndarray,
        init_coeffs: np.ndarray,
        train_params: np.ndarray,
        dt: float,
        num_snapshots: int,
        sigma: Optional[np.ndarray] = None,
        init_mode: str = "per-parameter",
        diagnostics: Tuple[str, ...] = (),
        **kwargs,
    ):
        super().__init__(train_params, dt, num_snapshots, **kwargs)
        self.mode_blocks = np.asarray(mode_blocks)
        self.eigenvalues = np.asarray(eigenvalues)
        self.init_coeffs = np.asarray(init_coeffs)
        self.sigma = np.asarray(sigma) if sigma is not None else np.empty(0)
        self.init_mode = init_mode
        self.diagnostics = tuple(diagnostics)
        if self.mode_blocks.shape[0] != self.num_train or self.init_coeffs.shape[0] != self.num_train:
            raise InvalidInputError("Stacked mode blocks and coefficients must have one entry per training parameter.")

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def _interpolate(self, neighbors: np.ndarray, weights: np.ndarray) -> DmdModel:
        modes = blend(weights, list(self.mode_blocks[neighbors]))
        b = blend(weights, list(self.init_coeffs[neighbors]))
        return DmdModel(modes, self.eigenvalues, b, self.dt, self.diagnostics, self.t0)


def fit_stacked(
    ts: TrainingSet,
    tau: float = DEFAULT_TAU,
    r_override: Optional[int] = None,
    num_neighbors: Optional[int] = None,
    init_coeffs: str = "per-parameter",
    memory_cap: int = MEMORY_CAP_BYTES,
    strict: bool = False,
    normalize_axes: bool = False,
) -> StackedDmd:
    """
    Runs classical DMD on the vertically stacked training snapshots and
    partitions the resulting modes into one n-row block per parameter.

    With `init_coeffs="per-parameter"` each block gets b_j = pinv(Phi_j) y0_j;
    `"global"` uses the single least-squares fit of the stacked initial state
    for every parameter.
    """
    if init_coeffs not in INIT_COEFF_MODES:
        raise InvalidInputError(f"init_coeffs must be one of {INIT_COEFF_MODES}, got '{init_coeffs}'.")
    num_series, n, cols = len(ts), ts.n, ts.series[0].num_snapshots
    estimate = stacked_memory_estimate(num_series, n, cols)
    if estimate > memory_cap:
        raise ResourceError(
            f"Stacked SVD needs about {estimate / 1024 ** 2:.0f} MiB, above the cap of {memory_cap / 1024 ** 2:.0f} MiB.",
            cap=memory_cap,
        )

    stacked = np.vstack([s.states for s in ts.series])
    lagged, forward = split_snapshots(stacked)
    svd = thin_svd(lagged)
    if r_override is not None:
        if r_override < 1 or r_override > svd.rank_capacity:
            raise InvalidInputError(
                f"Requested rank {r_override} exceeds the {svd.rank_capacity} available singular values."
            )
        r = int(r_override)
    else:
        r = select_rank(svd.sigma, tau)
    logger.info("fit_stacked: %d series stacked to %dx%d, rank %d", num_series, stacked.shape[0], cols, r)

    koopman = reduced_koopman(svd, forward, r)
    eig = eig_general(koopman)
    modes = svd.U[:, :r] @ eig.vectors
    blocks = modes.reshape(num_series, n, r)

    if init_coeffs == "global":
        b_global = pinv(modes) @ stacked[:, 0]
        b = np.tile(b_global, (num_series, 1))
    else:
        b = np.vstack([pinv(blocks[j]) @ s.initial_state for j, s in enumerate(ts.series)])

    return StackedDmd(
        blocks,
        eig.values,
        b,
        ts.params,
        ts.dt,
        cols,
        sigma=svd.sigma,
        init_mode=init_coeffs,
        diagnostics=eig.diagnostics,
        field_layout=ts.field_layout,
        param_names=ts.param_names,
        num_neighbors=num_neighbors,
        strict=strict,
        t0=ts.t0,
        normalize_axes=normalize_axes,
    )


def predict_stacked(model: StackedDmd, theta, times: Optional[Sequence[float]] = None) -> SnapshotSeries:
    return model.predict(theta, times)
