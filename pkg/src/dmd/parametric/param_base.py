# dmd/parametric/param_base.py

import abc
import itertools
import warnings
from typing import List, Optional, Sequence, Tuple

import numpy as np

from dmd.classical import DmdModel, reconstruct_states
from dmd.snapshots import FieldSpan, SnapshotSeries
from util.errors import ExtrapolationWarning, InvalidInputError
from util.linalg import lagrange_weights

# --- Configuration ---
EXTRAPOLATION_FRACTION = 0.10
IDW_POWER = 2.0


def as_param_matrix(params) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    return params.reshape(-1, 1) if params.ndim <= 1 else params


def axis_scales(train_params: np.ndarray) -> np.ndarray:
    """Per-axis training range; dividing by it makes distances comparable across parameters of different units."""
    train_params = as_param_matrix(train_params)
    spans = train_params.max(axis=0) - train_params.min(axis=0)
    spans[spans == 0] = 1.0
    return spans


def nearest_neighbors(train_params, theta, J: int, scale: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Indices of the J training parameters closest to theta, nearest first.

    Distances are plain Euclidean unless `scale` is given, in which case each
    axis is divided by it first (see axis_scales). Ties go to the lower index.
    For a scalar parameter with J=2 and theta strictly inside the training
    range, the two nodes that bracket theta are returned.
    """
    train_params = as_param_matrix(train_params)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if J < 1:
        raise InvalidInputError("The neighbour count J must be at least 1.")
    if J > train_params.shape[0]:
        raise InvalidInputError(f"J={J} exceeds the {train_params.shape[0]} training parameters.")
    if theta.size != train_params.shape[1]:
        raise InvalidInputError(
            f"theta has dimension {theta.size}, training parameters have {train_params.shape[1]}."
        )
    if scale is None:
        scale = np.ones(train_params.shape[1])

    distances = np.linalg.norm((train_params - theta) / scale, axis=1)
    order = np.lexsort((np.arange(distances.size), distances))

    if train_params.shape[1] == 1 and J == 2 and distances[order[0]] > 0:
        nodes = train_params[:, 0]
        below = np.flatnonzero(nodes < theta[0])
        above = np.flatnonzero(nodes > theta[0])
        if below.size and above.size:
            lower = below[np.argmax(nodes[below])]
            upper = above[np.argmin(nodes[above])]
            pair = np.array([lower, upper])
            return pair[np.lexsort((pair, distances[pair]))]
    return order[:J]


def select_neighbors(train_params, theta, J: int, scale: Optional[np.ndarray] = None) -> np.ndarray:
    """
    The interpolation neighbourhood of theta, nearest first.

    On a complete tensor grid with J = k**P the k nearest values are picked per
    axis so the neighbours form a sub-grid; otherwise the J nearest points.
    """
    train_params = as_param_matrix(train_params)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    P = train_params.shape[1]
    if theta.size != P:
        raise InvalidInputError(f"theta has dimension {theta.size}, training parameters have {P}.")
    if scale is None:
        scale = np.ones(P)
    axes = tensor_axes(train_params) if P > 1 else None
    per_axis = round(J ** (1.0 / P)) if P > 1 else 0

    if axes is not None and per_axis ** P == J and all(per_axis <= a.size for a in axes):
        picks = [axis[nearest_neighbors(axis, theta[d], per_axis)] for d, axis in enumerate(axes)]
        lookup = {tuple(row): i for i, row in enumerate(train_params)}
        neighbors = np.array([lookup[combo] for combo in itertools.product(*picks)])
    else:
        neighbors = nearest_neighbors(train_params, theta, J, scale)

    distances = np.linalg.norm((train_params[neighbors] - theta) / scale, axis=1)
    return neighbors[np.lexsort((neighbors, distances))]


def tensor_axes(params: np.ndarray) -> Optional[List[np.ndarray]]:
    """Sorted axis values when `params` is a complete tensor grid, otherwise None."""
    params = as_param_matrix(params)
    axes = [np.unique(params[:, d]) for d in range(params.shape[1])]
    if int(np.prod([a.size for a in axes])) != params.shape[0]:
        return None
    present = {tuple(row) for row in params}
    if all(combo in present for combo in itertools.product(*axes)):
        return axes
    return None


def interpolation_weights(nodes: np.ndarray, theta: np.ndarray, scale: Optional[np.ndarray] = None) -> Tuple[np.ndarray, str]:
    """
    Weights that interpolate values at `nodes` (J x P) to theta.

    Scalar parameters use Lagrange weights; tensor sub-grids use tensor-product
    Lagrange weights; anything else falls back to inverse-distance weights.
    Returns the weights and the name of the scheme used.
    """
    nodes = as_param_matrix(nodes)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if nodes.shape[1] == 1:
        return lagrange_weights(nodes[:, 0], theta[0]), "lagrange"

    axes = tensor_axes(nodes)
    if axes is not None:
        per_axis = [lagrange_weights(axis, theta[d]) for d, axis in enumerate(axes)]
        weights = np.ones(nodes.shape[0])
        for j, node in enumerate(nodes):
            for d, axis in enumerate(axes):
                weights[j] *= per_axis[d][np.searchsorted(axis, node[d])]
        return weights, "tensor-lagrange"

    if scale is None:
        scale = np.ones(nodes.shape[1])
    distances = np.linalg.norm((nodes - theta) / scale, axis=1)
    hits = np.flatnonzero(distances == 0)
    if hits.size:
        weights = np.zeros(nodes.shape[0])
        weights[hits[0]] = 1.0
        return weights, "inverse-distance"
    inverse = distances ** -IDW_POWER
    return inverse / inverse.sum(), "inverse-distance"


def blend(weights: np.ndarray, arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Weighted sum of equally shaped arrays (real and complex parts alike)."""
    return np.tensordot(weights, np.stack(arrays), axes=1)


class ParametricDmd(abc.ABC):
    """
    Shared machinery of the parametric schemes: neighbour selection,
    interpolation weights, extrapolation checks and time evaluation.
    Subclasses turn a neighbour set and its weights into a DmdModel.
    """
    variant: str = ""

    def __init__(
        self,
        train_params: np.ndarray,
        dt: float,
        num_snapshots: int,
        field_layout: Tuple[FieldSpan, ...] = (),
        param_names: Tuple[str, ...] = (),
        num_neighbors: Optional[int] = None,
        extrapolation_fraction: float = EXTRAPOLATION_FRACTION,
        strict: bool = False,
        t0: float = 0.0,
        normalize_axes: bool = False,
    ):
        self.train_params = as_param_matrix(train_params)
        self.dt = float(dt)
        self.t0 = float(t0)
        self.num_snapshots = int(num_snapshots)
        self.field_layout = tuple(field_layout)
        self.param_dim = self.train_params.shape[1]
        self.param_names = tuple(param_names) or tuple(f"p{i}" for i in range(self.param_dim))
        if num_neighbors is None:
            num_neighbors = min(2 ** self.param_dim, self.num_train)
        self.num_neighbors = int(num_neighbors)
        if self.num_neighbors < 1:
            raise InvalidInputError(f"The neighbour count J must be at least 1, got {self.num_neighbors}.")
        if self.num_neighbors > self.num_train:
            raise InvalidInputError(
                f"J={self.num_neighbors} exceeds the {self.num_train} training parameters."
            )
        self.extrapolation_fraction = extrapolation_fraction
        self.strict = strict
        self.normalize_axes = bool(normalize_axes)
        self._scale = axis_scales(self.train_params) if self.normalize_axes else None

    @property
    def num_train(self) -> int:
        return self.train_params.shape[0]

    @property
    def training_times(self) -> np.ndarray:
        return self.t0 + np.arange(self.num_snapshots) * self.dt

    @abc.abstractmethod
    def _interpolate(self, neighbors: np.ndarray, weights: np.ndarray) -> DmdModel:
        raise NotImplementedError

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.size != self.param_dim:
            raise InvalidInputError(
                f"theta has dimension {theta.size}; the model was trained on {self.param_dim} parameter(s)."
            )
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta must be finite.")
        return theta

    def outside_hull(self, theta) -> np.ndarray:
        """Per-axis distance by which theta leaves the training box (0 inside)."""
        theta = self._check_theta(theta)
        lo, hi = self.train_params.min(axis=0), self.train_params.max(axis=0)
        return np.maximum(np.maximum(lo - theta, theta - hi), 0.0)

    def extrapolation_diagnostics(self, theta) -> Tuple[str, ...]:
        excess = self.outside_hull(theta)
        spans = self.train_params.max(axis=0) - self.train_params.min(axis=0)
        limit = self.extrapolation_fraction * spans
        if np.any(excess > limit):
            message = (
                f"extrapolation: theta={np.round(np.atleast_1d(theta), 12).tolist()} lies outside the "
                f"training range by more than {self.extrapolation_fraction:.0%}"
            )
            warnings.warn(message, ExtrapolationWarning, stacklevel=3)
            return (message,)
        return ()

    def interpolation_set(self, theta) -> Tuple[np.ndarray, np.ndarray, str]:
        """Neighbour indices (nearest first), their weights, and the weighting scheme."""
        theta = self._check_theta(theta)
        neighbors = select_neighbors(self.train_params, theta, self.num_neighbors, self._scale)
        weights, scheme = interpolation_weights(self.train_params[neighbors], theta, self._scale)
        return neighbors, weights, scheme

    def model_at(self, theta) -> DmdModel:
        """The interpolated linear surrogate at parameter theta."""
        neighbors, weights, _ = self.interpolation_set(theta)
        return self._interpolate(neighbors, weights)

    def predict(self, theta, times: Optional[Sequence[float]] = None) -> SnapshotSeries:
        """
        Full-state prediction at theta over `times` (the training time grid by
        default). Warnings raised along the way are returned as the series'
        diagnostics.
        """
        theta = self._check_theta(theta)
        times = self.training_times if times is None else np.asarray(times, dtype=float).ravel()
        diagnostics = list(self.extrapolation_diagnostics(theta))

        neighbors, weights, scheme = self.interpolation_set(theta)
        if scheme == "inverse-distance":
            diagnostics.append("interpolation: inverse-distance weights on a scattered neighbour set")
        model = self._interpolate(neighbors, weights)
        diagnostics.extend(model.diagnostics)

        states, residue_notes = reconstruct_states(model, times, strict=self.strict)
        diagnostics.extend(residue_notes)
        return SnapshotSeries(theta, times, states, self.field_layout, tuple(diagnostics))
