import numpy as np
import pytest

from qswitch._validation import DimensionMismatch, ValidationError, check_density_matrix
from qswitch.operators import (
    HermitianBasis,
    SubspaceDecomposition,
    block_assemble,
    block_decompose,
    dag,
    devectorize,
    extend_R,
    population_R,
    random_density_matrix,
    random_hermitian,
    subspace_distance,
    superoperator_matrix,
    trace_norm,
    vectorize,
)

D4 = SubspaceDecomposition.from_projector(np.diag([1.0, 1.0, 0.0, 0.0]))


def test_block_decompose_diagonal():
    XS, XP, XQ, XR = block_decompose(np.diag([1.0, 2.0, 3.0, 4.0]), D4)
    assert np.allclose(XS, np.diag([1, 2]))
    assert np.allclose(XR, np.diag([3, 4]))
    assert np.allclose(XP, 0) and np.allclose(XQ, 0)


def test_block_decompose_identity():
    XS, XP, XQ, XR = block_decompose(np.eye(4), D4)
    assert np.allclose(XS, np.eye(2)) and np.allclose(XR, np.eye(2))
    assert np.allclose(XP, 0) and np.allclose(XQ, 0)


def test_block_round_trip(rng):
    d = SubspaceDecomposition.from_basis(np.linalg.qr(rng.standard_normal((5, 2)))[0].T)
    for _ in range(20):
        X = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        assert np.linalg.norm(block_assemble(*block_decompose(X, d), d) - X) <= 1e-12


def test_block_decompose_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        block_decompose(np.eye(3), D4)


def test_extend_R_examples():
    assert np.allclose(extend_R(np.zeros((2, 2)), D4), 0)
    assert np.allclose(extend_R(np.eye(2), D4), D4.projector_R)
    assert np.allclose(extend_R(np.diag([1.0, 2.0]), D4), np.diag([0, 0, 1, 2]))


def test_extend_then_decompose_is_exact(rng):
    XR = random_hermitian(2, rng)
    XS, XP, XQ, R = block_decompose(extend_R(XR, D4), D4)
    assert np.abs(XS).max() <= 1e-15 and np.abs(XP).max() <= 1e-15 and np.abs(XQ).max() <= 1e-15
    assert np.allclose(R, XR, atol=1e-15)


def test_projector_validation():
    with pytest.raises(ValidationError):
        SubspaceDecomposition.from_projector(np.eye(3))
    with pytest.raises(ValidationError):
        SubspaceDecomposition.from_projector(np.zeros((3, 3)))
    with pytest.raises(ValidationError):
        SubspaceDecomposition.from_projector(np.diag([1.0, 0.5]))


def test_from_projector_is_deterministic():
    P = np.zeros((4, 4))
    P[1, 1] = P[3, 3] = 1
    a = SubspaceDecomposition.from_projector(P)
    b = SubspaceDecomposition.from_projector(P.copy())
    assert np.array_equal(a.basis, b.basis)
    assert a.dim_S == 2 and a.dim_R == 2
    assert np.allclose(a.projector_S, P)


def test_subspace_distance_examples(rng):
    assert subspace_distance(np.diag([0.3, 0.7, 0, 0]).astype(complex), D4) <= 1e-15
    assert subspace_distance(D4.projector_R / 2, D4) == pytest.approx(1.0, abs=1e-14)


def test_ghz_initial_distance(ghz):
    cfg, bank, d = ghz
    ghz_vec = cfg.subspace_basis[0]
    rho_bar = np.outer(ghz_vec, ghz_vec.conj())
    assert subspace_distance(cfg.rho0, d) == pytest.approx(1.0, abs=1e-12)
    # orthogonal supports: half the trace norm of the difference is exactly one
    assert 0.5 * trace_norm(cfg.rho0 - rho_bar) == pytest.approx(1.0, abs=1e-12)


def test_distance_zero_iff_no_R_population(rng):
    rhos = random_density_matrix(4, rng, size=200)
    inside = np.zeros((50, 4, 4), dtype=complex)
    inside[:, :2, :2] = random_density_matrix(2, rng, size=50)
    for r in np.concatenate([rhos, inside]):
        zero = subspace_distance(r, D4) <= 1e-10
        assert zero == (population_R(r, D4) <= 1e-10)


def test_pinching_lower_bound(rng):
    rhos = random_density_matrix(4, rng, size=1000)
    assert np.all(subspace_distance(rhos, D4) >= population_R(rhos, D4) - 1e-12)


def test_trace_norm_batched_matches_svd(rng):
    X = rng.standard_normal((10, 3, 3)) + 1j * rng.standard_normal((10, 3, 3))
    ref = np.array([np.linalg.svd(x, compute_uv=False).sum() for x in X])
    assert np.allclose(trace_norm(X), ref, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 8])
def test_hermitian_basis_orthonormal(n):
    B = HermitianBasis(n)
    assert len(B.elements) == n * n
    assert np.abs(B.gram() - np.eye(n * n)).max() <= 1e-12
    for j, phi in enumerate(B.elements):
        assert np.allclose(phi, dag(phi))
        if j:
            assert abs(np.trace(phi)) <= 1e-14


def test_hermitian_basis_order():
    B = HermitianBasis(3)
    assert np.allclose(B.elements[0], np.eye(3) / np.sqrt(3))
    # first symmetric element couples (0, 1); first antisymmetric one too
    assert B.elements[1][0, 1] == pytest.approx(1 / np.sqrt(2))
    assert B.elements[4][0, 1] == pytest.approx(-1j / np.sqrt(2))
    assert np.allclose(np.diag(B.elements[7]).real, [1 / np.sqrt(2), -1 / np.sqrt(2), 0])


def test_vectorize_examples(rng):
    B = HermitianBasis(3)
    for k, phi in enumerate(B.elements):
        assert np.allclose(vectorize(phi, B), np.eye(9)[k], atol=1e-15)
    assert np.allclose(vectorize(np.zeros((3, 3)), B), 0)
    for _ in range(20):
        X = random_hermitian(3, rng)
        assert np.abs(devectorize(vectorize(X, B), B) - X).max() <= 1e-12


def test_vectorize_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        vectorize(np.array([[0, 1], [0, 0]]), HermitianBasis(2))


def test_superoperator_examples(rng):
    B = HermitianBasis(3)
    assert np.allclose(superoperator_matrix(lambda X: X, B), np.eye(9), atol=1e-14)
    assert np.allclose(superoperator_matrix(lambda X: -X, B), -np.eye(9), atol=1e-14)
    A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    M = superoperator_matrix(lambda X: A @ X @ dag(A), B)
    for _ in range(20):
        X = random_hermitian(3, rng)
        assert np.abs(M @ vectorize(X, B) - vectorize(A @ X @ dag(A), B, tol=1e-9)).max() <= 1e-10


def test_superoperator_rejects_non_hermitian_map():
    with pytest.raises(ValidationError):
        superoperator_matrix(lambda X: 1j * X, HermitianBasis(2))


def test_random_density_matrices_are_states(rng):
    for r in random_density_matrix(5, rng, size=50):
        check_density_matrix(r)
    pure = random_density_matrix(4, rng, rank=1)
    assert np.linalg.matrix_rank(pure, tol=1e-10) == 1
