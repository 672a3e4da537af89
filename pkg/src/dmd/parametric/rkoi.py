# dmd/parametric/rkoi.py

from typing import Optional, Sequence

import numpy as np

from dmd.classical import DmdModel
from dmd.parametric.local import LocalDecomposition, LocalInterpolationDmd, match_spectra
from dmd.parametric.param_base import blend
from dmd.snapshots import SnapshotSeries
from util.errors import InvalidInputError
from util.linalg import EigenPair, eig_general, normalize_phases, pinv

INIT_FRAMES = ("reduced", "modal")


class Rkoi(LocalInterpolationDmd):
    """
    Reduced Koopman operator interpolation.

    The r x r operators A_jr of the neighbours are interpolated entry by entry
    and the result is eigendecomposed afresh; the SVD modes are interpolated
    alongside. Initial coefficients are interpolated in the reduced frame
    (z_j = W_j b_j) and projected onto the new eigenvectors unless
    `init_frame="modal"`, which pairs the new spectrum with the nearest
    neighbour's and interpolates b_j directly.
    """
    variant = "rkoi"

    def __init__(self, decomps: Sequence[LocalDecomposition], init_frame: str = "reduced", **kwargs):
        if init_frame not in INIT_FRAMES:
            raise InvalidInputError(f"init_frame must be one of {INIT_FRAMES}, got '{init_frame}'.")
        super().__init__(decomps, **kwargs)
        self.init_frame = init_frame

    def interpolated_operator(self, theta) -> np.ndarray:
        neighbors, weights, _ = self.interpolation_set(theta)
        decomps = self._prepared(neighbors, pair=False)
        return blend(weights, [d.koopman for d in decomps])

    def _interpolate(self, neighbors: np.ndarray, weights: np.ndarray) -> DmdModel:
        decomps = self._prepared(neighbors, pair=self.init_frame == "modal")
        koopman = blend(weights, [d.koopman for d in decomps])
        eig = eig_general(koopman)
        U = blend(weights, [d.svd.U for d in decomps])

        if self.init_frame == "reduced":
            z = blend(weights, [d.eig.vectors @ d.init_coeffs for d in decomps])
            b = pinv(eig.vectors) @ z
        else:
            perm, _ = match_spectra(decomps[0].eig.values, eig.values)
            vectors, _ = normalize_phases(eig.vectors[:, perm])
            eig = EigenPair(eig.values[perm], vectors, eig.diagnostics)
            b = blend(weights, [d.init_coeffs for d in decomps])

        return DmdModel(U @ eig.vectors, eig.values, b, self.dt, eig.diagnostics, self.t0)


def predict_rkoi(
    decomps: Sequence[LocalDecomposition],
    theta,
    times: Optional[Sequence[float]] = None,
    J: Optional[int] = None,
    **kwargs,
) -> SnapshotSeries:
    return Rkoi(decomps, num_neighbors=J, **kwargs).predict(theta, times)
