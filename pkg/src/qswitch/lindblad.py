"""Lindblad generators, their adjoints and restrictions to the R block.

Everything here works on single matrices as well as stacks of shape
``(batch, N, N)``; the SME integrator relies on the batched form.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm

from ._validation import (
    TOL_HERM,
    DimensionMismatch,
    ValidationError,
    as_matrix,
    check_density_matrix,
    check_hermitian,
    check_probability_vector,
)
from .operators import (
    HermitianBasis,
    block_decompose,
    dag,
    devectorize,
    superoperator_matrix,
    vectorize,
)

GAS_TOL = 1e-9
CLUSTER_RTOL = 1e-9


def _comm(a, b):
    return a @ b - b @ a


def _anti(a, b):
    return a @ b + b @ a


def dissipator(A, rho):
    """``A rho A* - {A*A, rho}/2``."""
    A = np.asarray(A)
    rho = np.asarray(rho)
    if A.shape[-1] != rho.shape[-1]:
        raise DimensionMismatch(f"operator {A.shape} and state {rho.shape} do not match")
    AdA = dag(A) @ A
    return A @ rho @ dag(A) - 0.5 * _anti(AdA, rho)


def dissipator_adjoint(A, X):
    AdA = dag(A) @ A
    return dag(A) @ X @ A - 0.5 * _anti(AdA, X)


@dataclass(frozen=True, eq=False)
class MeasurementChannel:
    C: np.ndarray
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "C", as_matrix(self.C, name="C"))
        if not 0.0 < self.eta <= 1.0:
            raise ValidationError(f"detector efficiency must lie in (0, 1], got {self.eta}")

    def same_as(self, other, tol=1e-12):
        return (
            self.C.shape == other.C.shape
            and np.allclose(self.C, other.C, atol=tol, rtol=0)
            and abs(self.eta - other.eta) <= tol
        )


@dataclass(frozen=True, eq=False)
class LindbladGenerator:
    """``L(rho) = -i[H, rho] + sum_j D_{L_j}(rho) + D_C(rho)``.

    ``H`` is the total Hamiltonian (free part plus control part).
    """

    H: np.ndarray
    L_ops: tuple = ()
    channel: MeasurementChannel = None

    def __post_init__(self):
        H = check_hermitian(self.H, TOL_HERM, name="H")
        n = H.shape[0]
        object.__setattr__(self, "H", 0.5 * (H + dag(H)))
        object.__setattr__(
            self, "L_ops", tuple(as_matrix(L, dim=n, name="dissipation operator") for L in self.L_ops)
        )
        ch = self.channel if self.channel is not None else MeasurementChannel(np.zeros((n, n)))
        if ch.C.shape[0] != n:
            raise DimensionMismatch("measurement operator does not match H")
        object.__setattr__(self, "channel", ch)

    @property
    def dim(self):
        return self.H.shape[0]

    @property
    def C(self):
        return self.channel.C

    @property
    def eta(self):
        return self.channel.eta

    def all_jump_ops(self):
        return self.L_ops + (self.C,)

    def apply(self, rho):
        rho = np.asarray(rho, dtype=np.complex128)
        if rho.shape[-1] != self.dim:
            raise DimensionMismatch(f"state has dimension {rho.shape[-1]}, expected {self.dim}")
        out = -1j * _comm(self.H, rho)
        for A in self.all_jump_ops():
            out = out + dissipator(A, rho)
        return out

    def adjoint(self, X):
        X = np.asarray(X, dtype=np.complex128)
        if X.shape[-1] != self.dim:
            raise DimensionMismatch(f"operator has dimension {X.shape[-1]}, expected {self.dim}")
        out = 1j * _comm(self.H, X)
        for A in self.all_jump_ops():
            out = out + dissipator_adjoint(A, X)
        return out

    @cached_property
    def _basis(self):
        return HermitianBasis(self.dim)

    @cached_property
    def superoperator(self):
        """Real ``N^2 x N^2`` matrix of ``L`` in the Hermitian basis."""
        return superoperator_matrix(self.apply, self._basis)


def apply_generator(g, rho):
    return g.apply(rho)


def apply_adjoint(g, X):
    return g.adjoint(X)


class GeneratorBank:
    """Ordered set of generators sharing one measurement channel."""

    def __init__(self, generators):
        gens = list(generators)
        if not gens:
            raise ValidationError("a generator bank needs at least one generator")
        ch = gens[0].channel
        for g in gens[1:]:
            if g.dim != gens[0].dim:
                raise DimensionMismatch("generators act on different spaces")
            if not ch.same_as(g.channel):
                raise ValidationError("all generators must share the measurement channel C and eta")
        self.generators = tuple(gens)

    def __len__(self):
        return len(self.generators)

    def __getitem__(self, k):
        return self.generators[k]

    def __iter__(self):
        return iter(self.generators)

    @property
    def dim(self):
        return self.generators[0].dim

    @property
    def channel(self):
        return self.generators[0].channel

    def combine(self, gamma):
        """The generator ``sum_j gamma_j L_j`` for convex weights ``gamma``."""
        gamma = check_probability_vector(gamma)
        if gamma.size != len(self):
            raise DimensionMismatch(f"{gamma.size} weights for {len(self)} generators")
        H = sum(w * g.H for w, g in zip(gamma, self))
        L = tuple(np.sqrt(w) * L for w, g in zip(gamma, self) for L in g.L_ops)
        return LindbladGenerator(H, L, self.channel)

    def drift_operators(self, K):
        """Stack of ``L_k*(K)``; ``Tr(K L_k(rho)) = Tr(L_k*(K) rho)``."""
        return np.array([g.adjoint(K) for g in self])


class RestrictedGenerator:
    """The R-block map ``rho_R -> -i[H_R, rho_R] + sum_A D_A(rho_R)``.

    ``D_A(rho_R) = A_R rho_R A_R* - {A_P* A_P + A_R* A_R, rho_R}/2``.
    """

    def __init__(self, g, d):
        if g.dim != d.dim:
            raise DimensionMismatch("generator and subspace decomposition live on different spaces")
        self.dim = d.dim_R
        self.H_R = block_decompose(g.H, d)[3]
        self.ops = []
        for A in g.all_jump_ops():
            _, AP, _, AR = block_decompose(A, d)
            self.ops.append((AR, dag(AP) @ AP + dag(AR) @ AR))

    def apply(self, rho_R):
        out = -1j * _comm(self.H_R, rho_R)
        for AR, G in self.ops:
            out = out + AR @ rho_R @ dag(AR) - 0.5 * _anti(G, rho_R)
        return out

    __call__ = apply

    def adjoint(self, X):
        out = 1j * _comm(self.H_R, X)
        for AR, G in self.ops:
            out = out + dag(AR) @ X @ AR - 0.5 * _anti(G, X)
        return out

    @cached_property
    def basis(self):
        return HermitianBasis(self.dim)

    @cached_property
    def adjoint_matrix(self):
        return superoperator_matrix(self.adjoint, self.basis)

    @cached_property
    def matrix(self):
        return superoperator_matrix(self.apply, self.basis)


def restricted_generator(g, d):
    return RestrictedGenerator(g, d)


@dataclass
class InvarianceReport:
    invariant: bool
    residuals: dict = field(default_factory=dict)

    def __bool__(self):
        return self.invariant


def check_invariance(g, d, tol=1e-9):
    """Block conditions for invariance of ``H_S``.

    Every dissipation operator and ``C`` must have a vanishing Q block, and
    ``i H_P - (sum_j L_{j,S}* L_{j,P} + C_S* C_P) / 2`` must vanish.
    """
    res = {}
    HP = block_decompose(g.H, d)[1]
    cross = np.zeros_like(HP)
    for j, L in enumerate(g.L_ops):
        LS, LP, LQ, _ = block_decompose(L, d)
        res[f"L{j}_Q"] = float(np.linalg.norm(LQ))
        cross = cross + dag(LS) @ LP
    CS, CP, CQ, _ = block_decompose(g.C, d)
    res["C_Q"] = float(np.linalg.norm(CQ))
    cross = cross + dag(CS) @ CP
    res["H_P"] = float(np.linalg.norm(1j * HP - 0.5 * cross))
    return InvarianceReport(all(v <= tol for v in res.values()), res)


@dataclass
class SpectralReport:
    alpha: float
    gas: bool
    invariant: bool
    eigenvalues: np.ndarray = field(repr=False)


def spectral_abscissa(g, d, tol=GAS_TOL):
    """``alpha = min(-Re spec(L_R))``; ``gas`` is ``alpha > tol`` on an invariant subspace.

    ``g`` may be a single generator or a ``(bank, gamma)`` pair.
    """
    if isinstance(g, tuple):
        bank, gamma = g
        g = bank.combine(gamma)
    inv = check_invariance(g, d).invariant
    try:
        ev = np.linalg.eigvals(RestrictedGenerator(g, d).matrix)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    alpha = float(np.min(-ev.real))
    return SpectralReport(alpha=alpha, gas=bool(inv and alpha > tol), invariant=inv, eigenvalues=ev)


class AveragePropagator:
    """``rho -> exp(t L) rho`` via the real superoperator, caching ``exp(t L)`` per ``t``."""

    def __init__(self, g):
        self.g = g
        self.basis = HermitianBasis(g.dim)
        self._cache = {}

    def matrix(self, t):
        key = float(t)
        if key not in self._cache:
            self._cache[key] = expm(key * self.g.superoperator)
        return self._cache[key]

    def vec(self, rho):
        return vectorize(rho, self.basis, tol=1e-7)

    def unvec(self, v):
        return devectorize(v, self.basis)

    def __call__(self, rho, t):
        return self.unvec(self.matrix(t) @ self.vec(rho))


def propagate_average(g, rho0, t):
    """Solution ``exp(t L) rho0`` of the averaged master equation."""
    if t < 0:
        raise ValidationError("propagation time must be non-negative")
    if isinstance(g, tuple):
        bank, gamma = g
        g = bank.combine(gamma)
    rho0 = check_density_matrix(rho0, dim=g.dim)
    if t == 0:
        return rho0.copy()
    return AveragePropagator(g)(rho0, t)
