# dmd/parametric/factory.py

from typing import Optional, Sequence

from dmd.classical import DEFAULT_TAU
from dmd.parametric.local import fit_local
from dmd.parametric.param_base import ParametricDmd, as_param_matrix, axis_scales, select_neighbors
from dmd.parametric.repi import Repi
from dmd.parametric.rkoi import Rkoi
from dmd.parametric.stacked import fit_stacked
from dmd.snapshots import SnapshotSeries, TrainingSet
from util.errors import InvalidInputError

METHODS = ("stacked", "repi", "rkoi")
LOCAL_METHODS = {"repi": Repi, "rkoi": Rkoi}


def fit_parametric(
    method: str,
    ts: TrainingSet,
    tau: float = DEFAULT_TAU,
    r_override: Optional[int] = None,
    num_neighbors: Optional[int] = None,
    init_coeffs: str = "per-parameter",
    init_frame: str = "reduced",
    strict: bool = False,
    normalize_axes: bool = False,
    **stacked_options,
) -> ParametricDmd:
    """Trains one of the parametric schemes on a training set."""
    if method == "stacked":
        return fit_stacked(
            ts, tau, r_override, num_neighbors=num_neighbors, init_coeffs=init_coeffs, strict=strict,
            normalize_axes=normalize_axes, **stacked_options
        )
    if method not in LOCAL_METHODS:
        raise InvalidInputError(f"Unknown method '{method}'; choose from {METHODS}.")

    decomps = fit_local(ts, tau, r_override)
    kwargs = dict(
        num_snapshots=ts.series[0].num_snapshots,
        field_layout=ts.field_layout,
        param_names=ts.param_names,
        num_neighbors=num_neighbors,
        strict=strict,
        normalize_axes=normalize_axes,
    )
    if method == "rkoi":
        kwargs["init_frame"] = init_frame
    return LOCAL_METHODS[method](decomps, **kwargs)


def predict_from_training(
    ts: TrainingSet,
    theta,
    times: Optional[Sequence[float]] = None,
    method: str = "rkoi",
    J: Optional[int] = None,
    tau: float = DEFAULT_TAU,
    r_override: Optional[int] = None,
    **kwargs,
) -> SnapshotSeries:
    """
    End-to-end prediction at theta that decomposes only the J training series
    nearest to theta, so an rEPI/rKOI prediction costs exactly J thin SVDs.
    Stacked DMD has no local shortcut and is trained on the full set.
    """
    if method == "stacked":
        return fit_parametric(method, ts, tau, r_override, num_neighbors=J, **kwargs).predict(theta, times)
    params = as_param_matrix(ts.params)
    if J is None:
        J = min(2 ** params.shape[1], len(ts))
    scale = axis_scales(params) if kwargs.get("normalize_axes") else None
    neighbors = select_neighbors(params, theta, J, scale)
    subset = ts.subset(neighbors)
    return fit_parametric(method, subset, tau, r_override, num_neighbors=J, **kwargs).predict(theta, times)
