# dmd/parametric/repi.py

from typing import Optional, Sequence

import numpy as np

from dmd.classical import DmdModel
from dmd.parametric.local import LocalDecomposition, LocalInterpolationDmd
from dmd.parametric.param_base import blend
from dmd.snapshots import SnapshotSeries


class Repi(LocalInterpolationDmd):
    """
    Reduced eigen-pair interpolation.

    The SVD modes, eigenvectors, eigenvalues and initial coefficients of the
    neighbouring decompositions are interpolated entry by entry (real and
    imaginary parts alike) after sign alignment and eigen-pairing.
    """
    variant = "repi"

    def _interpolate(self, neighbors: np.ndarray, weights: np.ndarray) -> DmdModel:
        decomps = self._prepared(neighbors, pair=True)
        U = blend(weights, [d.svd.U for d in decomps])
        W = blend(weights, [d.eig.vectors for d in decomps])
        values = blend(weights, [d.eig.values for d in decomps])
        b = blend(weights, [d.init_coeffs for d in decomps])
        diagnostics = tuple(dict.fromkeys(m for d in decomps for m in d.diagnostics))
        return DmdModel(U @ W, values, b, self.dt, diagnostics, self.t0)


def predict_repi(
    decomps: Sequence[LocalDecomposition],
    theta,
    times: Optional[Sequence[float]] = None,
    J: Optional[int] = None,
    **kwargs,
) -> SnapshotSeries:
    return Repi(decomps, num_neighbors=J, **kwargs).predict(theta, times)
