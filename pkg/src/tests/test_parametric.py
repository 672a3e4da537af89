# tests/test_parametric.py

import itertools

import numpy as np
import pytest

from dmd.classical import DEFAULT_TAU, fit_dmd, reconstruct, select_rank, split_snapshots
from dmd.parametric.factory import fit_parametric, predict_from_training
from dmd.parametric.local import LocalDecomposition, align_modes, fit_local, match_spectra, pair_eigensystems
from dmd.parametric.param_base import axis_scales, interpolation_weights, nearest_neighbors, select_neighbors, tensor_axes
from dmd.parametric.rkoi import Rkoi
from dmd.parametric.stacked import fit_stacked
from dmd.snapshots import TrainingSet
from util.errors import EigenCrossingWarning, ExtrapolationWarning, InvalidInputError, RankDeficiencyError, ResourceError
from util.linalg import SvdFactors, eig_general, pinv, svd_calls, thin_svd


def make_decomposition(params, U, koopman, y0, dt=1.0):
    """Hand-built local decomposition with identity right singular vectors."""
    U = np.asarray(U, dtype=float)
    koopman = np.asarray(koopman, dtype=float)
    eig = eig_general(koopman)
    r = koopman.shape[0]
    b = pinv(U @ eig.vectors) @ np.asarray(y0, dtype=float)
    return LocalDecomposition(np.atleast_1d(np.asarray(params, dtype=float)), SvdFactors(U, np.ones(r), np.eye(r)), koopman, eig, b, dt)


@pytest.fixture
def tensor_grid():
    """Z in 5..15 (step 2) crossed with alpha in {2.5, 3, 3.5}."""
    return np.array(list(itertools.product(np.arange(5.0, 16.0, 2.0), [2.5, 3.0, 3.5])))


# --- Neighbour selection and weights ---

def test_nearest_neighbors_brackets_scalar_theta():
    """
    Tests that a scalar theta is bracketed by its two neighbours.
    """
    nodes = [0.0, 1.0, 2.0, 3.0]
    np.testing.assert_array_equal(nearest_neighbors(nodes, 1.4, 2), [1, 2])
    np.testing.assert_array_equal(nearest_neighbors(nodes, 2.0, 2), [2, 1])
    np.testing.assert_array_equal(nearest_neighbors(nodes, 3.5, 2), [3, 2])


def test_nearest_neighbors_prefers_bracket_over_closest_pair():
    """
    Tests that bracketing wins over the two closest nodes.
    """
    np.testing.assert_array_equal(nearest_neighbors([0.0, 1.0, 1.2], 0.9, 2), [1, 0])


def test_nearest_neighbors_rejects_bad_counts():
    """
    Tests rejection of J above N_S, J below 1 and a theta of the wrong dimension.
    """
    with pytest.raises(InvalidInputError):
        nearest_neighbors([0.0, 1.0], 0.5, 3)
    with pytest.raises(InvalidInputError):
        nearest_neighbors([0.0, 1.0], 0.5, 0)
    with pytest.raises(InvalidInputError):
        nearest_neighbors([0.0, 1.0], [0.5, 0.5], 1)


def test_nearest_neighbors_uses_plain_euclidean_distance():
    """Scaling by the training range is opt-in and can change the nearest node."""
    train = np.array([[0.0, 0.0], [4.0, 1.0], [10.0, 0.0]])
    np.testing.assert_array_equal(nearest_neighbors(train, [3.0, 0.0], 1), [1])
    np.testing.assert_array_equal(nearest_neighbors(train, [3.0, 0.0], 1, axis_scales(train)), [0])


def test_select_neighbors_on_tensor_grid(tensor_grid):
    """
    Tests that neighbours on a tensor grid form a 2 x 2 sub-grid.
    """
    neighbors = select_neighbors(tensor_grid, [7.3, 3.14], 4)
    picked = {tuple(row) for row in tensor_grid[neighbors]}
    assert picked == {(7.0, 3.0), (7.0, 3.5), (9.0, 3.0), (9.0, 3.5)}
    assert tuple(tensor_grid[neighbors[0]]) == (7.0, 3.0)


def test_tensor_axes_detects_incomplete_grid(tensor_grid):
    """
    Tests tensor-grid detection on complete and incomplete grids.
    """
    assert [a.size for a in tensor_axes(tensor_grid)] == [6, 3]
    assert tensor_axes(tensor_grid[1:]) is None


def test_tensor_weights_reproduce_bilinear_functions():
    """
    Tests that tensor Lagrange weights reproduce a bilinear function.
    """
    nodes = np.array([[7.0, 3.0], [7.0, 3.5], [9.0, 3.0], [9.0, 3.5]])
    weights, scheme = interpolation_weights(nodes, np.array([7.3, 3.14]))
    assert scheme == "tensor-lagrange"

    def f(Z, alpha):
        return 1.0 + 2.0 * Z + 3.0 * alpha + Z * alpha

    assert weights.sum() == pytest.approx(1.0)
    assert weights @ f(nodes[:, 0], nodes[:, 1]) == pytest.approx(f(7.3, 3.14))


def test_scattered_nodes_fall_back_to_inverse_distance():
    """
    Tests inverse-distance weights on scattered nodes.
    """
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    weights, scheme = interpolation_weights(nodes, np.array([0.2, 0.2]))
    assert scheme == "inverse-distance"
    assert weights.sum() == pytest.approx(1.0)
    assert np.argmax(weights) == 0
    exact, _ = interpolation_weights(nodes, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(exact, [0.0, 1.0, 0.0])


# --- Spectrum pairing and alignment ---

def test_match_spectra_examples():
    """
    Tests spectrum matching on real and conjugate pairs.
    """
    perm, cost = match_spectra(np.array([0.6, 0.4]), np.array([0.41, 0.59]))
    np.testing.assert_array_equal(perm, [1, 0])
    assert cost == pytest.approx(0.02)

    perm, cost = match_spectra(np.array([0.5 + 0.1j, 0.5 - 0.1j]), np.array([0.5 - 0.1j, 0.5 + 0.1j]))
    np.testing.assert_array_equal(perm, [1, 0])
    assert cost == pytest.approx(0.0)


def test_match_spectra_rejects_size_mismatch():
    """
    Tests that spectra of different sizes cannot be matched.
    """
    with pytest.raises(InvalidInputError):
        match_spectra(np.array([0.5]), np.array([0.5, 0.4]))


def test_pair_eigensystems_reorders_to_reference():
    """
    Tests that eigenvalues, vectors and coefficients follow the reference order.
    """
    reference = make_decomposition([0.0], np.eye(2), np.diag([0.9, -0.5]), [1.0, 1.0])
    other = make_decomposition([1.0], np.eye(2), np.diag([0.4, -0.7]), [1.0, 2.0])
    np.testing.assert_allclose(other.eig.values, [-0.7, 0.4])

    paired = pair_eigensystems([reference, other], crossing_tol=1.0)
    assert paired[0] is reference
    np.testing.assert_allclose(paired[1].eig.values, [0.4, -0.7])
    np.testing.assert_allclose(paired[1].init_coeffs, [1.0, 2.0])
    np.testing.assert_allclose(paired[1].modes @ paired[1].init_coeffs, [1.0, 2.0])


def test_pair_eigensystems_flags_crossing():
    """
    Tests that an expensive matching is reported as an eigenvalue crossing.
    """
    reference = make_decomposition([0.0], np.eye(2), np.diag([0.9, 0.1]), [1.0, 1.0])
    other = make_decomposition([1.0], np.eye(2), np.diag([-0.5, -0.3]), [1.0, 1.0])
    with pytest.warns(EigenCrossingWarning):
        paired = pair_eigensystems([reference, other])
    assert any(note.startswith("eigenvalue crossing") for note in paired[1].diagnostics)


def test_align_modes_restores_flipped_column(rng):
    """
    Tests that a flipped SVD column is flipped back without changing the reconstruction.
    """
    Q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    A = np.array([[0.9, 0.2], [0.0, 0.5]])
    S = np.diag([1.0, -1.0])
    y0 = Q @ np.array([1.0, 0.5])
    reference = make_decomposition([0.0], Q, A, y0)
    flipped = make_decomposition([1.0], Q @ S, S @ A @ S, y0)

    aligned = align_modes([reference, flipped])
    assert aligned[0] is reference
    np.testing.assert_allclose(aligned[1].svd.U, Q)
    np.testing.assert_allclose(aligned[1].koopman, A)
    for t in (0.0, 1.0, 3.0):
        np.testing.assert_allclose(reconstruct(aligned[1].model(), t), reconstruct(flipped.model(), t), atol=1e-12)

    again = align_modes(aligned)
    assert all(a is b for a, b in zip(again, aligned))


def test_align_modes_preserves_every_subspace(rng):
    """Sign flips change no column span: U, the DMD modes and the reconstructed states all survive alignment."""
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    A = np.array([[0.9, 0.2, 0.0], [-0.1, 0.7, 0.1], [0.0, 0.05, -0.4]])
    y0 = Q @ np.array([1.0, 0.5, -0.3])
    decomps = [make_decomposition([0.0], Q, A, y0)]
    for j in range(1, 5):
        S = np.diag(rng.choice([-1.0, 1.0], 3))
        decomps.append(make_decomposition([float(j)], Q @ S, S @ A @ S, y0))

    for before, after in zip(decomps, align_modes(decomps)):
        np.testing.assert_allclose(after.svd.U @ after.svd.U.T, before.svd.U @ before.svd.U.T, atol=1e-12)
        projector = before.modes @ np.linalg.pinv(before.modes)
        np.testing.assert_allclose(projector @ after.modes, after.modes, atol=1e-10)
        np.testing.assert_allclose(after.modes @ after.init_coeffs, y0, atol=1e-12)


def test_pair_eigensystems_preserves_each_spectrum(rng):
    """
    Tests that pairing only permutes each spectrum and keeps the initial state.
    """
    base = np.array([[0.9, 0.3, 0.0, 0.0], [-0.3, 0.9, 0.0, 0.0], [0.0, 0.0, 0.5, 0.1], [0.0, 0.0, 0.0, -0.2]])
    Q, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    y0 = rng.standard_normal(6)
    decomps = [
        make_decomposition([mu], Q, base + mu * 0.05 * rng.standard_normal((4, 4)), Q @ Q.T @ y0)
        for mu in (0.0, 1.0, 2.0)
    ]
    paired = pair_eigensystems(decomps, crossing_tol=np.inf)
    for before, after in zip(decomps, paired):
        np.testing.assert_array_equal(np.sort(after.eig.values), np.sort(before.eig.values))
        np.testing.assert_allclose(after.koopman @ after.eig.vectors, after.eig.vectors * after.eig.values, atol=1e-10)
        np.testing.assert_allclose(after.modes @ after.init_coeffs, before.modes @ before.init_coeffs, atol=1e-12)


# --- Local decompositions ---

def test_fit_local_recovers_each_spectrum(simulate):
    """
    Tests the per-parameter spectra of local decompositions.
    """
    series = [simulate(np.diag([mu, 0.3]), [1.0, 1.0], steps=8, dt=1.0, params=(mu,)) for mu in (0.5, 0.7)]
    decomps = fit_local(TrainingSet(tuple(series), ("mu",)), r_override=2)
    for d, mu in zip(decomps, (0.5, 0.7)):
        np.testing.assert_allclose(d.eig.values, [mu, 0.3], atol=1e-10)


def test_fit_local_uses_largest_proposed_rank(modal_family):
    """
    Tests that all local decompositions share the largest proposed rank.
    """
    ts = modal_family()
    proposed = [select_rank(thin_svd(split_snapshots(s)[0]).sigma, DEFAULT_TAU) for s in ts.series]
    decomps = fit_local(ts)
    assert {d.rank for d in decomps} == {max(proposed)}


def test_fit_local_reports_rank_deficient_series(modal_family):
    """
    Tests that the offending series is named in the RankDeficiencyError.
    """
    with pytest.raises(RankDeficiencyError) as info:
        fit_local(modal_family(), r_override=4)
    assert info.value.series == 0


# --- Interpolation schemes ---

def test_rkoi_interpolates_scalar_operator(scalar_family):
    """
    Tests rKOI on scalar operators.
    """
    ts = scalar_family([(1.0, 0.9), (3.0, 0.7)])
    model = fit_parametric("rkoi", ts)
    np.testing.assert_allclose(model.interpolated_operator(2.0), [[0.8]])
    prediction = model.predict(2.0)
    np.testing.assert_allclose(prediction.states[0], 0.8 ** np.arange(11), atol=1e-12)


def test_rkoi_reproduces_operator_linear_in_parameter():
    """
    Tests that rKOI is exact for an operator linear in the parameter.
    """
    def A(mu):
        return np.array([[0.5 + 0.1 * mu, 0.2], [0.0, 0.3]])

    decomps = [make_decomposition([mu], np.eye(2), A(mu), [1.0, 1.0]) for mu in (1.0, 3.0)]
    model = Rkoi(decomps, num_snapshots=5)
    np.testing.assert_allclose(model.interpolated_operator(2.0), A(2.0), atol=1e-14)
    np.testing.assert_allclose(model.model_at(2.0).eigenvalues, [0.7, 0.3], atol=1e-12)


def test_repi_interpolates_eigenvalues_linearly(scalar_family):
    """
    Tests rEPI eigenvalue interpolation between two nodes.
    """
    ts = scalar_family([(1.0, 0.6), (2.0, 0.7), (3.0, 0.8)])
    model = fit_parametric("repi", ts, num_neighbors=2)
    np.testing.assert_allclose(model.model_at(2.5).eigenvalues, [0.75])
    np.testing.assert_allclose(model.predict(2.5).states[0], 0.75 ** np.arange(11), atol=1e-12)


def test_repi_single_neighbor_is_nearest_model(modal_family):
    """
    Tests that J = 1 returns the nearest node's model.
    """
    ts = modal_family()
    model = fit_parametric("repi", ts, r_override=3, num_neighbors=1)
    nearest = model.decomps[2].model()
    interpolated = model.model_at(2.9)
    np.testing.assert_allclose(interpolated.eigenvalues, nearest.eigenvalues)
    np.testing.assert_allclose(interpolated.modes, nearest.modes, atol=1e-14)


@pytest.mark.parametrize("method, options", [
    ("repi", {}),
    ("rkoi", {}),
    ("rkoi", {"init_frame": "modal"}),
])
def test_prediction_at_training_parameter_reproduces_series(modal_family, method, options):
    """
    Tests that a prediction at a training node reproduces its series.
    """
    ts = modal_family()
    model = fit_parametric(method, ts, r_override=3, **options)
    prediction = model.predict(2.0)
    reference = ts.series[1]
    np.testing.assert_allclose(prediction.states, reference.states, atol=1e-9 * np.abs(reference.states).max())
    assert prediction.diagnostics == ()


def test_local_models_match_classical_dmd_at_nodes(modal_family):
    """
    Tests that a node's local model is its classical DMD.
    """
    ts = modal_family()
    model = fit_parametric("rkoi", ts, r_override=3)
    classical = fit_dmd(ts.series[3], r_override=3)
    np.testing.assert_allclose(model.model_at(4.0).eigenvalues, classical.eigenvalues, atol=1e-10)


def test_repi_tracks_eigenvalues_linear_in_parameter(modal_family):
    """
    Tests rEPI on eigenvalues that move linearly with the parameter.
    """
    ts = modal_family()
    model = fit_parametric("repi", ts, r_override=3)
    np.testing.assert_allclose(model.model_at(2.5).eigenvalues, modal_family.eigenvalues(2.5), atol=1e-8)


def test_predict_rejects_wrong_theta_dimension(modal_family):
    """
    Tests that theta must match the parameter dimension.
    """
    model = fit_parametric("rkoi", modal_family(), r_override=3)
    with pytest.raises(InvalidInputError):
        model.predict([1.0, 2.0])


@pytest.mark.parametrize("method", ["stacked", "repi", "rkoi"])
def test_zero_neighbours_is_rejected(modal_family, method):
    """
    Tests that J = 0 is rejected instead of falling back to the default.
    """
    with pytest.raises(InvalidInputError):
        fit_parametric(method, modal_family(), r_override=3, num_neighbors=0)


def test_default_neighbour_count_follows_parameter_dimension(modal_family):
    """
    Tests the default J = min(2^P, N_S).
    """
    assert fit_parametric("rkoi", modal_family(), r_override=3).num_neighbors == 2


def test_fit_parametric_rejects_unknown_method(modal_family):
    """
    Tests that an unknown method name is rejected.
    """
    with pytest.raises(InvalidInputError):
        fit_parametric("dmdc", modal_family())


# --- Stacked DMD ---

def test_stacked_with_one_series_is_classical_dmd(modal_family):
    """
    Tests that stacked DMD of a single series is classical DMD.
    """
    ts = modal_family(mus=(1.0,))
    stacked = fit_stacked(ts, r_override=3)
    classical = fit_dmd(ts.series[0], r_override=3)
    np.testing.assert_allclose(stacked.eigenvalues, classical.eigenvalues, atol=1e-12)
    np.testing.assert_allclose(stacked.predict(1.0).states, ts.series[0].states, atol=1e-10)


def test_stacked_shares_the_common_spectrum(simulate, linear_system, rng):
    """
    Tests that stacked DMD recovers the spectrum shared by all series.
    """
    G, spectrum = linear_system
    series = [simulate(G, rng.standard_normal(5), steps=30, params=(mu,)) for mu in (0.0, 1.0)]
    model = fit_stacked(TrainingSet(tuple(series)), r_override=5)
    np.testing.assert_allclose(model.eigenvalues, spectrum, atol=1e-8)
    assert model.mode_blocks.shape == (2, 5, 5)


def test_stacked_interpolates_solutions_linear_in_parameter(simulate, linear_system, rng):
    """
    Tests stacked interpolation of solutions linear in the parameter, for both coefficient modes.
    """
    G, _ = linear_system
    y0 = rng.standard_normal(5)
    ts = TrainingSet(tuple(simulate(G, mu * y0, steps=30, params=(mu,)) for mu in (1.0, 3.0)), ("mu",))
    expected = simulate(G, 2.0 * y0, steps=30, params=(2.0,))
    for init_coeffs in ("per-parameter", "global"):
        model = fit_stacked(ts, r_override=5, init_coeffs=init_coeffs)
        prediction = model.predict(2.0)
        np.testing.assert_allclose(prediction.states, expected.states, atol=1e-8 * np.abs(expected.states).max())


def test_stacked_reproduces_every_training_series(simulate, linear_system, rng):
    """
    Tests that stacked DMD reproduces each of three training series at its node.
    """
    G, _ = linear_system
    ts = TrainingSet(tuple(simulate(G, rng.standard_normal(5), steps=20, params=(mu,)) for mu in (0.0, 1.0, 2.0)))
    model = fit_stacked(ts, r_override=5)
    for s in ts.series:
        prediction = model.predict(s.params)
        np.testing.assert_allclose(prediction.states, s.states, atol=1e-8 * np.abs(s.states).max())


def test_stacked_uses_one_spectrum_for_every_parameter(modal_family):
    """
    Tests that every interpolated stacked model has the shared eigenvalues.
    """
    model = fit_stacked(modal_family(), r_override=3)
    for theta in (1.0, 2.0, 2.5, 3.7, 4.0):
        np.testing.assert_array_equal(model.model_at(theta).eigenvalues, model.eigenvalues)


def test_stacked_refuses_to_exceed_memory_cap(modal_family):
    """
    Tests the memory cap of the stacked SVD.
    """
    with pytest.raises(ResourceError):
        fit_stacked(modal_family(), memory_cap=1)


def test_extrapolation_is_reported(modal_family):
    """
    Tests the extrapolation warning and diagnostic.
    """
    model = fit_stacked(modal_family(), r_override=3)
    with pytest.warns(ExtrapolationWarning):
        prediction = model.predict(10.0)
    assert any(note.startswith("extrapolation") for note in prediction.diagnostics)


def test_stacked_rejects_unknown_coefficient_mode(modal_family):
    """
    Tests that an unknown init_coeffs mode is rejected.
    """
    with pytest.raises(InvalidInputError):
        fit_stacked(modal_family(), init_coeffs="median")


# --- End-to-end cost ---

@pytest.mark.parametrize("method, expected_svds", [("rkoi", 2), ("repi", 2), ("stacked", 1)])
def test_predict_from_training_svd_count(modal_family, method, expected_svds):
    """
    Tests that end-to-end prediction decomposes only the J neighbours.
    """
    ts = modal_family()
    svd_calls.reset()
    prediction = predict_from_training(ts, 2.5, method=method, J=2, r_override=3)
    assert svd_calls.count == expected_svds
    assert prediction.num_snapshots == ts.series[0].num_snapshots
