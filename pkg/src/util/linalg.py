# util/linalg.py

import threading
import warnings
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
import scipy.linalg

from util.errors import (
    DefectiveEigenbasisWarning,
    InvalidInputError,
    NumericalFailureError,
)

# --- Configuration ---
PINV_REL_TOL = 1e-12
DEFECTIVE_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class SvdFactors:
    """Thin SVD factors, M = U @ diag(sigma) @ V.T."""
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank_capacity(self) -> int:
        return len(self.sigma)

    def truncate(self, r: int) -> "SvdFactors":
        return SvdFactors(self.U[:, :r], self.sigma[:r], self.V[:, :r])


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Eigenvalues and unit eigenvectors (columns) of a square operator."""
    values: np.ndarray
    vectors: np.ndarray
    diagnostics: Tuple[str, ...] = field(default=())

    @property
    def defective(self) -> bool:
        return any(d.startswith("defective") for d in self.diagnostics)


class _CallCounter:
    """Counts thin SVD invocations; used to instrument prediction paths."""
    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self):
        with self._lock:
            self._count += 1

    def reset(self):
        with self._lock:
            self._count = 0

    @property
    def count(self) -> int:
        with self._lock:
            return self._count


svd_calls = _CallCounter()


def _as_finite_matrix(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {M.shape}.")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} contains non-finite entries.")
    return M


def thin_svd(M) -> SvdFactors:
    """
    Computes the thin SVD of a real matrix.

    Column signs are fixed so that the largest-magnitude entry of every left
    singular vector is positive, which makes the factors reproducible and
    gives neighbouring parameter realizations a common sign convention.

    Raises:
        InvalidInputError: if M is empty or has non-finite entries.
        NumericalFailureError: if both LAPACK drivers fail to converge.
    """
    M = _as_finite_matrix(M)
    if np.iscomplexobj(M):
        raise InvalidInputError("thin_svd expects a real matrix.")
    svd_calls.increment()

    attempts = []
    for driver in ("gesdd", "gesvd"):
        try:
            U, sigma, Vh = scipy.linalg.svd(
                M, full_matrices=False, lapack_driver=driver, check_finite=False
            )
            break
        except np.linalg.LinAlgError as e:
            attempts.append(f"{driver}: {e}")
    else:
        raise NumericalFailureError(
            f"SVD of a {M.shape[0]}x{M.shape[1]} matrix did not converge.",
            {"attempts": attempts, "shape": M.shape},
        )

    V = Vh.T
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return SvdFactors(U * signs, sigma, V * signs)


def normalize_phases(vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotates each column so its largest-magnitude component is real and positive.

    Returns the rotated columns and the unit phase factors p such that
    rotated = vectors * p.
    """
    vectors = np.asarray(vectors, dtype=complex)
    pivots = np.argmax(np.abs(vectors), axis=0)
    lead = vectors[pivots, np.arange(vectors.shape[1])]
    magnitude = np.abs(lead)
    phases = np.ones(vectors.shape[1], dtype=complex)
    nonzero = magnitude > 0
    phases[nonzero] = np.conj(lead[nonzero]) / magnitude[nonzero]
    rotated = vectors * phases
    # The pivot entry is real by construction; drop round-off in its imaginary part.
    rotated[pivots, np.arange(vectors.shape[1])] = magnitude
    return rotated, phases


def canonical_order(values: np.ndarray) -> np.ndarray:
    """Index order by descending modulus, ties broken by descending argument in [-pi, pi]."""
    values = np.asarray(values, dtype=complex)
    angles = np.angle(values)
    real_axis = values.imag == 0
    angles[real_axis] = np.where(values.real[real_axis] < 0, np.pi, 0.0)
    return np.lexsort((-angles, -np.abs(values)))


def eig_general(A) -> EigenPair:
    """
    Eigendecomposition of a real square matrix.

    Eigenvalues come back in canonical order; eigenvectors have unit 2-norm
    and normalized phase. A nearly defective eigenbasis is reported through a
    DefectiveEigenbasisWarning and a diagnostics entry; the decomposition is
    still returned.
    """
    A = _as_finite_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"eig_general needs a square matrix, got {A.shape}.")
    if np.iscomplexobj(A):
        raise InvalidInputError("eig_general expects a real matrix.")

    try:
        values, vectors = scipy.linalg.eig(A, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError(
            f"QR iteration failed on a {A.shape[0]}x{A.shape[0]} operator.", {"lapack": str(e)}
        ) from e

    order = canonical_order(values)
    values = values[order]
    vectors = vectors[:, order]
    vectors = vectors / np.linalg.norm(vectors, axis=0)
    vectors, _ = normalize_phases(vectors)

    diagnostics = []
    condition = np.linalg.cond(vectors)
    if not np.isfinite(condition) or condition > DEFECTIVE_CONDITION:
        message = f"defective eigenbasis: condition number {condition:.3e}"
        warnings.warn(message, DefectiveEigenbasisWarning, stacklevel=2)
        diagnostics.append(message)
    return EigenPair(values, vectors, tuple(diagnostics))


def pinv(M, rel_tol: float = PINV_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values below rel_tol * sigma_max count as zero."""
    if not 0.0 < rel_tol < 1.0:
        raise InvalidInputError(f"rel_tol must lie in (0, 1), got {rel_tol}.")
    M = _as_finite_matrix(M)
    if not np.any(M):
        return np.zeros((M.shape[1], M.shape[0]), dtype=M.dtype)
    return scipy.linalg.pinv(M, atol=0.0, rtol=rel_tol, check_finite=False)


def lagrange_weights(nodes, theta: float) -> np.ndarray:
    """
    Lagrange interpolation weights of `nodes` evaluated at `theta`.

    sum(w) == 1 and sum(w * p(nodes)) == p(theta) for every polynomial p of
    degree below len(nodes). When theta is a node the weights are the exact
    unit vector.
    """
    nodes = np.asarray(nodes, dtype=float).ravel()
    if nodes.size == 0:
        raise InvalidInputError("lagrange_weights needs at least one node.")
    if np.unique(nodes).size != nodes.size:
        raise InvalidInputError(f"Interpolation nodes must be distinct, got {nodes.tolist()}.")

    hits = np.flatnonzero(nodes == theta)
    if hits.size:
        weights = np.zeros(nodes.size)
        weights[hits[0]] = 1.0
        return weights

    weights = np.ones(nodes.size)
    for j in range(nodes.size):
        for k in range(nodes.size):
            if k != j:
                weights[j] *= (theta - nodes[k]) / (nodes[j] - nodes[k])
    return weights
