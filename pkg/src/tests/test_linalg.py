# tests/test_linalg.py

import numpy as np
import pytest

from util.errors import DefectiveEigenbasisWarning, InvalidInputError
from util.linalg import canonical_order, eig_general, lagrange_weights, normalize_phases, pinv, svd_calls, thin_svd


def test_thin_svd_of_diagonal_matrix():
    """
    Tests the thin SVD of a diagonal matrix.
    """
    svd = thin_svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(svd.sigma, [3.0, 1.0])
    np.testing.assert_allclose(svd.U, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(svd.V, np.eye(2), atol=1e-15)


def test_thin_svd_of_single_column():
    """
    Tests the thin SVD of a single column.
    """
    svd = thin_svd(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(svd.sigma, [5.0])
    np.testing.assert_allclose(svd.U[:, 0], [0.6, 0.8])
    np.testing.assert_allclose(svd.V, [[1.0]])


def test_thin_svd_matches_gram_matrix_oracle(rng):
    """
    Tests singular values against the eigenvalues of M^T M.
    """
    M = rng.standard_normal((50, 10))
    svd = thin_svd(M)
    oracle = np.sqrt(np.sort(np.linalg.eigvalsh(M.T @ M))[::-1])
    np.testing.assert_allclose(svd.sigma, oracle, rtol=1e-10)
    np.testing.assert_allclose(svd.U @ np.diag(svd.sigma) @ svd.V.T, M, atol=1e-12)


def test_thin_svd_sign_convention(rng):
    """The largest-magnitude entry of every left singular vector is positive."""
    U = thin_svd(rng.standard_normal((12, 6))).U
    pivots = np.argmax(np.abs(U), axis=0)
    assert np.all(U[pivots, np.arange(6)] > 0)


def test_thin_svd_rejects_non_finite_input():
    """
    Tests that NaN entries are rejected before the SVD.
    """
    with pytest.raises(InvalidInputError):
        thin_svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_svd_call_counter():
    """
    Tests that every thin SVD is counted.
    """
    svd_calls.reset()
    thin_svd(np.eye(3))
    thin_svd(np.eye(2))
    assert svd_calls.count == 2


def test_eig_general_of_diagonal_matrix():
    """
    Tests eigenvalue order and eigenvectors of a diagonal matrix.
    """
    eig = eig_general(np.diag([2.0, 3.0]))
    np.testing.assert_allclose(eig.values, [3.0, 2.0])
    np.testing.assert_allclose(eig.vectors, [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    assert not eig.defective


def test_eig_general_of_rotation():
    """
    Tests the conjugate eigenvalues of a quarter-turn rotation.
    """
    eig = eig_general(np.array([[0.0, -1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(eig.values, [1j, -1j], atol=1e-14)


def test_eig_general_of_companion_matrix():
    """lambda^3 - 6 lambda^2 + 11 lambda - 6 = (lambda - 1)(lambda - 2)(lambda - 3)."""
    companion = np.array([[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    eig = eig_general(companion)
    np.testing.assert_allclose(eig.values, [3.0, 2.0, 1.0], atol=1e-10)


def test_eig_general_vectors_are_normalized(rng):
    """
    Tests unit norm and real positive pivots of the eigenvectors.
    """
    A = rng.standard_normal((6, 6))
    eig = eig_general(A)
    np.testing.assert_allclose(np.linalg.norm(eig.vectors, axis=0), 1.0)
    pivots = np.argmax(np.abs(eig.vectors), axis=0)
    lead = eig.vectors[pivots, np.arange(6)]
    assert np.all(lead.real > 0)
    np.testing.assert_allclose(lead.imag, 0.0, atol=1e-15)
    np.testing.assert_allclose(A @ eig.vectors, eig.vectors * eig.values, atol=1e-10)


def test_eig_general_flags_defective_operator():
    """
    Tests that a Jordan block is reported as defective.
    """
    with pytest.warns(DefectiveEigenbasisWarning):
        eig = eig_general(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert eig.defective
    np.testing.assert_allclose(eig.values, [1.0, 1.0])


def test_eig_general_rejects_rectangular_matrix():
    """
    Tests that a rectangular operator is rejected.
    """
    with pytest.raises(InvalidInputError):
        eig_general(np.ones((2, 3)))


def test_canonical_order_sorts_by_modulus_then_argument():
    """
    Tests ordering by descending modulus with ties broken by argument.
    """
    values = np.array([0.5, -0.9, 0.9j, -0.9j, 0.1])
    ordered = values[canonical_order(values)]
    np.testing.assert_array_equal(ordered, [-0.9, 0.9j, -0.9j, 0.5, 0.1])


def test_normalize_phases_makes_pivot_real():
    """
    Tests phase normalization of a complex column.
    """
    rotated, phases = normalize_phases(np.array([[1j], [0.5]]))
    np.testing.assert_allclose(rotated[:, 0], [1.0, -0.5j])
    np.testing.assert_allclose(phases, [-1j])


def test_pinv_examples(rng):
    """
    Tests the pseudo-inverse of regular, singular and rectangular matrices.
    """
    np.testing.assert_allclose(pinv(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    np.testing.assert_allclose(pinv(np.array([[1.0, 0.0], [0.0, 0.0]])), [[1.0, 0.0], [0.0, 0.0]])
    M = rng.standard_normal((5, 3))
    np.testing.assert_allclose(M @ pinv(M) @ M, M, atol=1e-9)


def test_pinv_of_zero_matrix():
    """
    Tests that the pseudo-inverse of a zero matrix is the transposed zero matrix.
    """
    result = pinv(np.zeros((2, 3)))
    assert result.shape == (3, 2)
    assert not np.any(result)


def test_lagrange_weights_examples():
    """
    Tests Lagrange weights inside, at and beyond the nodes.
    """
    np.testing.assert_allclose(lagrange_weights([0.0, 1.0], 0.25), [0.75, 0.25])
    np.testing.assert_array_equal(lagrange_weights([0.0, 1.0, 2.0], 1.0), [0.0, 1.0, 0.0])
    np.testing.assert_allclose(lagrange_weights([0.0, 2.0], 3.0), [-0.5, 1.5])


def test_lagrange_weights_reproduce_polynomials():
    """
    Tests that the weights reproduce a cubic on four nodes.
    """
    nodes = np.array([0.0, 0.5, 1.5, 3.0])
    weights = lagrange_weights(nodes, 1.1)
    assert weights.sum() == pytest.approx(1.0)
    assert weights @ nodes ** 3 == pytest.approx(1.1 ** 3)


def test_lagrange_weights_reject_duplicate_nodes():
    """
    Tests that repeated nodes are rejected.
    """
    with pytest.raises(InvalidInputError):
        lagrange_weights([1.0, 1.0], 0.5)


def test_eig_general_diagonalizes_random_operator(rng):
    """
    Tests that A = W diag(Lambda) W^-1 for a random operator.
    """
    A = rng.standard_normal((7, 7))
    eig = eig_general(A)
    W = eig.vectors
    np.testing.assert_allclose(W @ np.diag(eig.values) @ np.linalg.inv(W), A, atol=1e-10)


def test_eig_general_keeps_conjugate_pairs_together(rng):
    """Complex eigenvalues of a real operator come as adjacent (+imag, -imag) pairs with conjugate vectors."""
    A = rng.standard_normal((8, 8))
    eig = eig_general(A)
    complex_positions = np.flatnonzero(eig.values.imag > 0)
    assert complex_positions.size > 0
    for i in complex_positions:
        assert eig.values[i + 1] == np.conj(eig.values[i])
        np.testing.assert_allclose(eig.vectors[:, i + 1], np.conj(eig.vectors[:, i]), atol=1e-12)


@pytest.mark.parametrize("degree", range(1, 7))
def test_lagrange_weights_reproduce_monomials(rng, degree):
    """
    Tests that d + 1 nodes reproduce every monomial up to degree d at random points.
    """
    nodes = np.linspace(-1.0, 1.0, degree + 1) + rng.uniform(-0.05, 0.05, degree + 1)
    for theta in rng.uniform(-1.0, 1.0, 5):
        weights = lagrange_weights(nodes, theta)
        for k in range(degree + 1):
            assert weights @ nodes ** k == pytest.approx(theta ** k, abs=1e-10)
