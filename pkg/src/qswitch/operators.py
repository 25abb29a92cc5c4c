"""Operator algebra on a finite-dimensional Hilbert space.

Block decomposition with respect to ``H = H_S (+) H_R``, extension of R-block
operators, the trace-norm distance to the target subspace, and real
vectorization of Hermitian matrices in a generalized Gell-Mann basis.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import null_space

from ._validation import (
    TOL_HERM,
    DimensionMismatch,
    ValidationError,
    as_matrix,
    check_hermitian,
)


def dag(a):
    return np.swapaxes(np.conj(a), -1, -2)


def _phase_fix(v):
    # make the largest-modulus entry real and positive
    i = np.argmax(np.abs(v) + 1e-12 * np.arange(v.size)[::-1])
    return v * np.exp(-1j * np.angle(v[i]))


@dataclass(frozen=True, eq=False)
class SubspaceDecomposition:
    """Orthogonal splitting ``H = H_S (+) H_R`` with an adapted basis.

    ``basis`` is a unitary whose first ``dim_S`` columns span ``H_S``; the
    remaining ``dim_R`` columns span the orthogonal complement.  Build it with
    :meth:`from_projector` or :meth:`from_basis`.
    """

    basis: np.ndarray
    dim_S: int
    projector_S: np.ndarray = field(repr=False)
    projector_R: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def dim_R(self):
        return self.dim - self.dim_S

    @classmethod
    def from_projector(cls, projector, tol=1e-9):
        P = as_matrix(projector, name="projector")
        if P.shape[0] < 2:
            raise ValidationError("Hilbert space dimension must be >= 2")
        if np.linalg.norm(P - dag(P)) > tol or np.linalg.norm(P @ P - P) > tol:
            raise ValidationError("projector must be an orthogonal projection")
        w, V = np.linalg.eigh(0.5 * (P + dag(P)))
        w = np.round(w)
        vecs = [_phase_fix(V[:, i]) for i in range(V.shape[1])]
        # descending eigenvalue, then lexicographic on entry magnitudes
        order = sorted(
            range(len(vecs)),
            key=lambda i: (-w[i], tuple(-np.round(np.abs(vecs[i]), 12))),
        )
        U = np.column_stack([vecs[i] for i in order])
        dim_S = int(np.sum(w > 0.5))
        return cls._build(U, dim_S)

    @classmethod
    def from_basis(cls, vectors, dim=None):
        """Adapted basis from an orthonormal basis of ``H_S`` (rows or a single vector)."""
        B = np.atleast_2d(np.asarray(vectors, dtype=np.complex128))
        if dim is not None and B.shape[1] != dim:
            raise DimensionMismatch(f"basis vectors have length {B.shape[1]}, expected {dim}")
        S = B.T
        if np.linalg.norm(dag(S) @ S - np.eye(S.shape[1])) > 1e-9:
            raise ValidationError("basis of H_S must be orthonormal")
        R = null_space(dag(S))
        R = np.column_stack([_phase_fix(R[:, i]) for i in range(R.shape[1])]) if R.size else R
        return cls._build(np.hstack([S, R]), S.shape[1])

    @classmethod
    def _build(cls, U, dim_S):
        n = U.shape[0]
        if n < 2:
            raise ValidationError("Hilbert space dimension must be >= 2")
        if not 0 < dim_S < n:
            raise ValidationError("projector must differ from 0 and I")
        PS = U[:, :dim_S] @ dag(U[:, :dim_S])
        return cls(basis=U, dim_S=dim_S, projector_S=PS, projector_R=np.eye(n) - PS)

    def to_adapted(self, X):
        return dag(self.basis) @ X @ self.basis

    def from_adapted(self, Y):
        return self.basis @ Y @ dag(self.basis)


def block_decompose(X, d):
    """Return ``(X_S, X_P, X_Q, X_R)`` in the basis adapted to ``d``."""
    X = as_matrix(X, dim=d.dim, name="operator")
    Y = d.to_adapted(X)
    s = d.dim_S
    return Y[:s, :s], Y[:s, s:], Y[s:, :s], Y[s:, s:]


def block_assemble(XS, XP, XQ, XR, d):
    return d.from_adapted(np.block([[XS, XP], [XQ, XR]]))


def extend_R(XR, d):
    """Embed an R-block operator into the full space with zero S, P, Q blocks."""
    XR = as_matrix(XR, dim=d.dim_R, name="R-block operator")
    return d.basis[:, d.dim_S:] @ XR @ dag(d.basis[:, d.dim_S:])


def restrict_R(X, d):
    return block_decompose(X, d)[3]


def trace_norm(X):
    """Sum of singular values; uses ``eigvalsh`` for Hermitian input (batched)."""
    X = np.asarray(X)
    if np.allclose(X, dag(X), atol=1e-13):
        return np.abs(np.linalg.eigvalsh(X)).sum(axis=-1)
    return np.linalg.svd(X, compute_uv=False).sum(axis=-1)


def subspace_distance(rho, d):
    """Trace-norm distance ``||rho - P_S rho P_S||_1`` to the target set.

    Accepts a single matrix or a stack of shape ``(..., N, N)``.
    """
    rho = np.asarray(rho, dtype=np.complex128)
    PS = d.projector_S
    return trace_norm(rho - PS @ rho @ PS)


def population_R(rho, d):
    """``Tr(P_R rho)`` for a single matrix or a stack."""
    return np.einsum("ij,...ji->...", d.projector_R, rho).real


class HermitianBasis:
    """Hilbert-Schmidt orthonormal basis of ``n x n`` Hermitian matrices.

    Element 0 is ``I/sqrt(n)``, followed by the symmetric off-diagonal
    Gell-Mann matrices, the antisymmetric ones (both in row-major ``(j, k)``
    order with ``j < k``) and finally the ``n - 1`` diagonal ones.
    """

    def __init__(self, n):
        if n < 1:
            raise ValidationError("basis dimension must be positive")
        self.n = n
        els = [np.eye(n, dtype=np.complex128) / np.sqrt(n)]
        pairs = list(combinations(range(n), 2))
        for j, k in pairs:
            E = np.zeros((n, n), dtype=np.complex128)
            E[j, k] = E[k, j] = 1 / np.sqrt(2)
            els.append(E)
        for j, k in pairs:
            E = np.zeros((n, n), dtype=np.complex128)
            E[j, k] = -1j / np.sqrt(2)
            E[k, j] = 1j / np.sqrt(2)
            els.append(E)
        for l in range(1, n):
            diag = np.zeros(n)
            diag[:l] = 1.0
            diag[l] = -l
            els.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(np.complex128))
        self.elements = np.array(els)

    def __len__(self):
        return self.n * self.n

    def gram(self):
        return np.einsum("aij,bji->ab", self.elements, self.elements).real


def vectorize(X, B, tol=TOL_HERM):
    """Real coordinates ``v_j = Tr(Phi_j X)`` of a Hermitian matrix."""
    X = check_hermitian(as_matrix(X, dim=B.n), tol)
    return np.einsum("aij,ji->a", B.elements, X).real


def devectorize(v, B):
    v = np.asarray(v, dtype=float)
    if v.shape != (len(B),):
        raise DimensionMismatch(f"vector has shape {v.shape}, expected ({len(B)},)")
    return np.einsum("a,aij->ij", v, B.elements)


def superoperator_matrix(f, B, tol=1e-9):
    """Real matrix ``M[i, j] = Tr(Phi_i f(Phi_j))`` of a Hermiticity-preserving map."""
    cols = []
    for j, phi in enumerate(B.elements):
        out = np.asarray(f(phi))
        err = np.linalg.norm(out - dag(out))
        if err > tol * max(1.0, np.linalg.norm(out)):
            raise ValidationError(f"map is not Hermiticity preserving on basis element {j} ({err:.3e})")
        cols.append(np.einsum("aij,ji->a", B.elements, out).real)
    return np.column_stack(cols)


def random_density_matrix(n, rng, rank=None, size=None):
    """Hilbert-Schmidt random states ``G G* / Tr(G G*)`` from Ginibre ``G``.

    With ``size`` a stack of shape ``(size, n, n)`` is returned.
    """
    k = n if rank is None else rank
    shape = (n, k) if size is None else (size, n, k)
    G = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    rho = G @ dag(G)
    tr = np.trace(rho, axis1=-2, axis2=-1).real
    return rho / tr[..., None, None]


def random_hermitian(n, rng, size=None):
    shape = (n, n) if size is None else (size, n, n)
    G = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return 0.5 * (G + dag(G))
