# dmd/parametric/local.py

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from dmd.classical import DEFAULT_TAU, DmdModel, reduced_koopman, select_rank, split_snapshots
from dmd.parametric.param_base import ParametricDmd
from dmd.snapshots import TrainingSet
from util.errors import EigenCrossingWarning, InvalidInputError, RankDeficiencyError
from util.linalg import EigenPair, SvdFactors, eig_general, normalize_phases, pinv, thin_svd

logger = logging.getLogger(__name__)

# --- Configuration ---
CROSSING_TOL = 0.5
CONJUGATE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class LocalDecomposition:
    """
    Classical DMD working set of one training parameter: truncated SVD
    factors, the reduced Koopman operator A_jr, its eigen-pair and the
    initial coefficients b_j.
    """
    params: np.ndarray
    svd: SvdFactors
    koopman: np.ndarray
    eig: EigenPair
    init_coeffs: np.ndarray
    dt: float
    diagnostics: Tuple[str, ...] = field(default=())
    t0: float = 0.0

    @property
    def rank(self) -> int:
        return self.koopman.shape[0]

    @property
    def modes(self) -> np.ndarray:
        return self.svd.U @ self.eig.vectors

    def model(self) -> DmdModel:
        return DmdModel(self.modes, self.eig.values, self.init_coeffs, self.dt, self.diagnostics, self.t0)


def _decompose(svd: SvdFactors, forward: np.ndarray, y0: np.ndarray, r: int, params, dt: float, series_index: int, t0: float = 0.0) -> LocalDecomposition:
    try:
        koopman = reduced_koopman(svd, forward, r)
    except RankDeficiencyError as e:
        raise RankDeficiencyError(
            f"Training series {series_index} supports fewer than {r} modes: {e}",
            index=e.index,
            series=series_index,
        ) from e
    truncated = svd.truncate(r)
    eig = eig_general(koopman)
    b = pinv(truncated.U @ eig.vectors) @ y0
    return LocalDecomposition(np.asarray(params, dtype=float), truncated, koopman, eig, b, dt, eig.diagnostics, t0)


def fit_local(
    ts: TrainingSet,
    tau: float = DEFAULT_TAU,
    r_override: Optional[int] = None,
    ref_index: int = 0,
) -> List[LocalDecomposition]:
    """
    Individual DMD decompositions of every series in `ts` at a shared rank.

    Each series proposes a rank by the energy criterion; the largest proposal
    (or `r_override`) is used for all. The returned decompositions are sign
    aligned and eigen-paired against the series at `ref_index`.
    """
    if not 0 <= ref_index < len(ts):
        raise InvalidInputError(f"ref_index {ref_index} outside 0..{len(ts) - 1}.")

    factors = []
    for s in ts.series:
        lagged, forward = split_snapshots(s)
        factors.append((thin_svd(lagged), forward, s.initial_state))

    if r_override is not None:
        r = int(r_override)
        if r < 1:
            raise InvalidInputError(f"Rank override must be positive, got {r}.")
    else:
        r = max(select_rank(svd.sigma, tau) for svd, _, _ in factors)
    logger.info("fit_local: %d series at shared rank %d", len(ts), r)

    decomps = []
    for j, ((svd, forward, y0), s) in enumerate(zip(factors, ts.series)):
        if r > svd.rank_capacity:
            raise RankDeficiencyError(
                f"Training series {j} has only {svd.rank_capacity} singular values; rank {r} requested.",
                index=svd.rank_capacity,
                series=j,
            )
        decomps.append(_decompose(svd, forward, y0, r, s.params, ts.dt, j, ts.t0))

    decomps = align_modes(decomps, ref_index)
    return pair_eigensystems(decomps, ref_index)


def _rephase(decomp: LocalDecomposition, vectors: np.ndarray, values: np.ndarray, init_coeffs: np.ndarray, **changes) -> LocalDecomposition:
    """Re-normalizes eigenvector phases and compensates the initial coefficients."""
    vectors, phases = normalize_phases(vectors)
    eig = EigenPair(values, vectors, decomp.eig.diagnostics)
    return replace(decomp, eig=eig, init_coeffs=init_coeffs / phases, **changes)


def align_modes(decomps: Sequence[LocalDecomposition], ref_index: int = 0) -> List[LocalDecomposition]:
    """
    Flips SVD mode signs so that every column of U_j has a nonnegative inner
    product with the matching column of the reference U.

    A flip of column k negates row and column k of A_jr and row k of W_j, so
    the DMD modes U_j W_j and therefore b_j are unchanged up to the phase
    re-normalization, which b_j absorbs. Already aligned decompositions are
    returned as they are.
    """
    decomps = list(decomps)
    ranks = {d.rank for d in decomps}
    if len(ranks) != 1:
        raise InvalidInputError(f"Decompositions must share a rank, got {sorted(ranks)}.")
    reference = decomps[ref_index].svd.U

    aligned = []
    for j, d in enumerate(decomps):
        if j == ref_index:
            aligned.append(d)
            continue
        flips = np.sum(d.svd.U * reference, axis=0) < 0
        if not np.any(flips):
            aligned.append(d)
            continue
        signs = np.where(flips, -1.0, 1.0)
        svd = SvdFactors(d.svd.U * signs, d.svd.sigma, d.svd.V * signs)
        koopman = signs[:, None] * d.koopman * signs[None, :]
        aligned.append(
            _rephase(d, signs[:, None] * d.eig.vectors, d.eig.values, d.init_coeffs, svd=svd, koopman=koopman)
        )
    return aligned


def _conjugate_partners(values: np.ndarray) -> np.ndarray:
    partners = np.full(values.size, -1)
    for a, v in enumerate(values):
        if v.imag == 0 or partners[a] >= 0:
            continue
        gaps = np.abs(values - np.conj(v))
        gaps[a] = np.inf
        b = int(np.argmin(gaps))
        if gaps[b] <= CONJUGATE_TOL * max(1.0, abs(v)) and partners[b] < 0:
            partners[a], partners[b] = b, a
    return partners


def match_spectra(reference: np.ndarray, values: np.ndarray) -> Tuple[np.ndarray, float]:
    """
    Minimum total |lambda_ref - lambda| assignment of `values` onto `reference`.

    Returns `perm` such that values[perm[a]] is paired with reference[a],
    together with the total cost. Conjugate pairs in the reference are mapped
    onto conjugate pairs whenever the target has them.
    """
    reference = np.asarray(reference, dtype=complex)
    values = np.asarray(values, dtype=complex)
    if reference.size != values.size:
        raise InvalidInputError(f"Cannot pair spectra of sizes {reference.size} and {values.size}.")
    cost = np.abs(reference[:, None] - values[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(reference.size, dtype=int)
    perm[rows] = cols

    ref_partner = _conjugate_partners(reference)
    val_partner = _conjugate_partners(values)
    for a in range(reference.size):
        a_bar = ref_partner[a]
        if a_bar < a:
            continue
        b_bar = val_partner[perm[a]]
        if b_bar < 0 or perm[a_bar] == b_bar:
            continue
        c = int(np.flatnonzero(perm == b_bar)[0])
        perm[c], perm[a_bar] = perm[a_bar], b_bar
    return perm, float(cost[np.arange(reference.size), perm].sum())


def pair_eigensystems(
    decomps: Sequence[LocalDecomposition],
    ref_index: int = 0,
    crossing_tol: float = CROSSING_TOL,
) -> List[LocalDecomposition]:
    """
    Reorders each decomposition's eigenvalues, eigenvectors and initial
    coefficients to follow the reference spectrum. A matching whose total
    cost exceeds `crossing_tol` is flagged as a possible eigenvalue crossing.
    """
    decomps = list(decomps)
    reference = decomps[ref_index].eig.values
    paired = []
    for j, d in enumerate(decomps):
        if j == ref_index:
            paired.append(d)
            continue
        perm, cost = match_spectra(reference, d.eig.values)
        diagnostics = d.diagnostics
        if cost > crossing_tol:
            message = (
                f"eigenvalue crossing suspected for parameters {d.params.tolist()}: "
                f"matching cost {cost:.3e} exceeds {crossing_tol:.3e}"
            )
            warnings.warn(message, EigenCrossingWarning, stacklevel=2)
            diagnostics = diagnostics + (message,)
        if np.array_equal(perm, np.arange(perm.size)) and diagnostics == d.diagnostics:
            paired.append(d)
            continue
        paired.append(
            _rephase(
                d, d.eig.vectors[:, perm], d.eig.values[perm], d.init_coeffs[perm], diagnostics=diagnostics
            )
        )
    return paired


class LocalInterpolationDmd(ParametricDmd):
    """Parametric schemes built from per-parameter decompositions (rEPI, rKOI)."""

    def __init__(self, decomps: Sequence[LocalDecomposition], **kwargs):
        decomps = list(decomps)
        if not decomps:
            raise InvalidInputError("At least one local decomposition is required.")
        if len({d.rank for d in decomps}) != 1:
            raise InvalidInputError("Local decompositions must share a rank.")
        kwargs.setdefault("num_snapshots", decomps[0].svd.V.shape[0] + 1)
        kwargs.setdefault("t0", decomps[0].t0)
        super().__init__(np.vstack([d.params for d in decomps]), decomps[0].dt, **kwargs)
        self.decomps = decomps

    @property
    def rank(self) -> int:
        return self.decomps[0].rank

    def _prepared(self, neighbors: np.ndarray, pair: bool = True) -> List[LocalDecomposition]:
        """Neighbour decompositions aligned (and optionally paired) to the nearest one."""
        chosen = align_modes([self.decomps[i] for i in neighbors], ref_index=0)
        return pair_eigensystems(chosen, ref_index=0) if pair else chosen
