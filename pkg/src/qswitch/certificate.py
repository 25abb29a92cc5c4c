"""Lyapunov certificates ``Tr(K rho)`` for switched Lindblad dynamics.

A certificate is a positive-definite ``K_R`` on ``H_R`` (extended by zero to
``K``) and a rate ``c > 0`` with ``min_k Tr(K L_k(rho)) <= -c Tr(K rho)``.
It is built from the dominant eigenvector of the adjoint of a convex
combination of restricted generators, repaired towards positive definiteness
when needed.  The same module derives the dwell-time bound, the modulation
bound used by gain-scheduled switching, and distance constants relating
``Tr(K rho)`` to the trace-norm distance from the target.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import svd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError, as_matrix, check_probability_vector
from .lindblad import CLUSTER_RTOL, GAS_TOL, RestrictedGenerator, check_invariance
from .operators import dag, devectorize, extend_R, population_R, restrict_R

TOL_PD = 1e-9
TIE_TOL = 1e-12


class CertificateError(RuntimeError):
    pass


class NotInvariant(CertificateError):
    pass


class NotGAS(CertificateError):
    pass


class PerturbationFailed(CertificateError):
    pass


@dataclass(frozen=True)
class ConvexWeights:
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", check_probability_vector(self.gamma))

    @classmethod
    def uniform(cls, m):
        return cls(np.full(m, 1.0 / m))

    def __len__(self):
        return self.gamma.size


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    K_R: np.ndarray
    K: np.ndarray
    c: float
    gamma: ConvexWeights
    alpha_gamma: float
    c_direct: float = float("nan")
    delta: float = 0.0
    multiplicity: int = 1

    def value(self, rho):
        """``Tr(K rho)`` for one state or a stack."""
        return np.einsum("ij,...ji->...", self.K, rho).real

    def scaled(self, s):
        return LyapunovCertificate(
            s * self.K_R, s * self.K, self.c, self.gamma, self.alpha_gamma, self.c_direct, s * self.delta,
            self.multiplicity,
        )

    def to_dict(self):
        return {
            "K_R": _encode(self.K_R),
            "c": self.c,
            "c_direct": self.c_direct,
            "gamma": self.gamma.gamma.tolist(),
            "alpha_gamma": self.alpha_gamma,
            "delta": self.delta,
            "multiplicity": self.multiplicity,
        }


def _encode(X):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(X)]


@dataclass(frozen=True)
class DwellTimeBounds:
    l_upper: np.ndarray
    l_lower: np.ndarray
    l2_upper: np.ndarray
    l2_lower: np.ndarray
    epsilon: float
    t_D: float
    l: np.ndarray = field(init=False)
    l2: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "l", np.maximum(np.abs(self.l_upper), np.abs(self.l_lower)))
        object.__setattr__(self, "l2", np.maximum(np.abs(self.l2_upper), np.abs(self.l2_lower)))

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "t_D": self.t_D,
            "l_upper": self.l_upper.tolist(),
            "l_lower": self.l_lower.tolist(),
            "l2_upper": self.l2_upper.tolist(),
            "l2_lower": self.l2_lower.tolist(),
            "l": self.l.tolist(),
            "l2": self.l2.tolist(),
        }


@dataclass(frozen=True)
class ModulationBound:
    M_bar: float


def _as_bank_list(bank):
    return list(bank) if hasattr(bank, "__iter__") else [bank]


def _K_R_of(K, d):
    K = np.asarray(K, dtype=np.complex128)
    if K.shape[0] == d.dim_R and d.dim_R != d.dim:
        return K
    return restrict_R(as_matrix(K, dim=d.dim), d)


def inv_sqrt(K_R):
    w, U = np.linalg.eigh(0.5 * (K_R + dag(K_R)))
    if w[0] <= 0:
        raise ValidationError(f"K_R is not positive definite (min eigenvalue {w[0]:.3e})")
    return (U / np.sqrt(w)) @ dag(U)


def pencil_eigenvalues(Y, K_R):
    """Eigenvalues of ``K_R^{-1/2} Y K_R^{-1/2}``, ascending."""
    S = inv_sqrt(K_R)
    Z = S @ Y @ S
    return np.linalg.eigvalsh(0.5 * (Z + dag(Z)))


def combined_restricted(bank, d, gamma=None):
    gens = _as_bank_list(bank)
    if len(gens) == 1:
        return RestrictedGenerator(gens[0], d)
    if gamma is None:
        gamma = np.full(len(gens), 1.0 / len(gens))
    gamma = gamma.gamma if isinstance(gamma, ConvexWeights) else gamma
    return RestrictedGenerator(bank.combine(gamma), d)


def certified_rate(bank, K, d, gamma=None):
    """Largest ``c`` with ``L*_{gamma,R}(K_R) <= -c K_R``."""
    K_R = _K_R_of(K, d)
    LR = combined_restricted(bank, d, gamma)
    return float(-pencil_eigenvalues(LR.adjoint(K_R), K_R)[-1])


def _dominant_eigenspace(M):
    ev = np.linalg.eigvals(M)
    alpha = float(np.min(-ev.real))
    _, s, Vh = svd(M + alpha * np.eye(M.shape[0]))
    thresh = CLUSTER_RTOL * max(1.0, s[0])
    n = max(1, int(np.sum(s <= thresh)))
    return alpha, Vh[-n:].T


def _search_gamma(bank, d, step=0.1):
    m = len(bank)
    grid = np.arange(step, 1.0, step)
    best = None
    for head in product(grid, repeat=m - 1):
        last = 1.0 - sum(head)
        if last <= 1e-12:
            continue
        g = np.array(head + (last,))
        alpha = float(np.min(-np.linalg.eigvals(combined_restricted(bank, d, g).matrix).real))
        if best is None or alpha > best[0] + 1e-12:
            best = (alpha, g)
    return ConvexWeights(best[1] / best[1].sum())


def build_certificate(bank, d, gamma=None, gamma_search=False, max_doublings=60):
    """Construct ``K_R`` and ``c`` from the dominant eigenvectors of ``L*_{gamma,R}``.

    The eigenvectors ``X_k`` for eigenvalue ``-alpha_gamma`` are combined with
    weights ``Tr(X_k) / sqrt(sum_i Tr(X_i)^2)``, which maximises the
    Hilbert-Schmidt angle with the identity.  A result that is not positive
    definite is shifted by ``delta * I`` until both ``X > 0`` and
    ``L*(X) < 0`` hold.
    """
    gens = _as_bank_list(bank)
    for j, g in enumerate(gens):
        rep = check_invariance(g, d)
        if not rep.invariant:
            raise NotInvariant(f"H_S is not invariant for generator {j + 1}: {rep.residuals}")
    if gamma is None:
        gamma = _search_gamma(bank, d) if gamma_search and len(gens) > 1 else ConvexWeights.uniform(len(gens))
    elif not isinstance(gamma, ConvexWeights):
        gamma = ConvexWeights(gamma)
    LR = combined_restricted(bank, d, gamma.gamma)
    alpha, vecs = _dominant_eigenspace(LR.adjoint_matrix)
    if alpha <= GAS_TOL:
        raise NotGAS(f"spectral abscissa {alpha:.3e} of the combined generator is not positive")

    Xs = [devectorize(v, LR.basis) for v in vecs.T]
    traces = np.array([np.trace(X).real for X in Xs])
    norm = np.sqrt(np.sum(traces ** 2))
    beta = traces / norm if norm > 0 else np.eye(len(Xs))[0]
    X = sum(b * Xk for b, Xk in zip(beta, Xs))
    X = 0.5 * (X + dag(X))
    X = X / np.max(np.abs(np.linalg.eigvalsh(X)))

    def acceptable(Y):
        return np.linalg.eigvalsh(Y)[0] > TOL_PD and np.linalg.eigvalsh(LR.adjoint(Y))[-1] < -TOL_PD

    delta = 0.0
    if not acceptable(X):
        delta = 1e-8
        for _ in range(max_doublings):
            if acceptable(X + delta * np.eye(X.shape[0])):
                break
            delta *= 2
        else:
            raise PerturbationFailed("no identity shift made the candidate positive definite and decreasing")
        X = X + delta * np.eye(X.shape[0])

    lam_max = np.linalg.eigvalsh(X)[-1]
    K_R = X / lam_max
    c = certified_rate(bank, K_R, d, gamma)
    # the closed-form rate with its sign corrected and lambda_max(X) as denominator
    c_dir = float(-np.linalg.eigvalsh(LR.adjoint(K_R))[-1] / np.linalg.eigvalsh(K_R)[-1])
    cert = LyapunovCertificate(
        K_R=K_R,
        K=extend_R(K_R, d),
        c=c,
        gamma=gamma,
        alpha_gamma=alpha,
        c_direct=c_dir,
        delta=float(delta / lam_max),
        multiplicity=len(Xs),
    )
    if c <= 0 or certificate_residual(bank, cert, d) > 1e-9:
        raise PerturbationFailed(f"certificate failed verification (c = {c:.3e})")
    return cert


def certificate_residual(bank, cert, d):
    """``max eig K_R^{-1/2}(L*_{gamma,R}(K_R) + c K_R)K_R^{-1/2}``; non-positive when sound."""
    LR = combined_restricted(bank, d, cert.gamma)
    return float(pencil_eigenvalues(LR.adjoint(cert.K_R) + cert.c * cert.K_R, cert.K_R)[-1])


def drifts(bank, K, rho):
    """``Tr(K L_k(rho))`` for every generator; shape ``(..., m)``."""
    A = bank.drift_operators(np.asarray(K, dtype=np.complex128))
    return np.einsum("kij,...ji->...k", A, rho).real


def argmin_index(values, tie_tol=TIE_TOL):
    """Smallest index whose value is within ``tie_tol`` of the minimum."""
    values = np.asarray(values)
    low = values.min(axis=-1, keepdims=True)
    return np.argmax(values <= low + tie_tol, axis=-1)


def min_drift(bank, K, rho):
    """``(min_k Tr(K L_k(rho)), argmin)`` with ties going to the lowest index (0-based)."""
    v = drifts(bank, K, rho)
    idx = argmin_index(v)
    val = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    if np.ndim(val) == 0:
        return float(val), int(idx)
    return val, idx


def compute_l_bounds(bank, cert, d, epsilon=0.3):
    """Per-generator growth bounds of ``L*_{j,R}`` and its square relative to ``K_R``, and ``t_D``."""
    if not 0.0 < epsilon < 1.0:
        raise ValidationError("epsilon must lie in (0, 1)")
    K_R = cert.K_R
    lu, ll, l2u, l2l = [], [], [], []
    for g in _as_bank_list(bank):
        LR = RestrictedGenerator(g, d)
        Y = LR.adjoint(K_R)
        e1 = pencil_eigenvalues(Y, K_R)
        e2 = pencil_eigenvalues(LR.adjoint(Y), K_R)
        lu.append(e1[-1])
        ll.append(e1[0])
        l2u.append(e2[-1])
        l2l.append(e2[0])
    lu, ll, l2u, l2l = map(np.array, (lu, ll, l2u, l2l))
    l = np.maximum(np.abs(lu), np.abs(ll))
    l2 = np.maximum(np.abs(l2u), np.abs(l2l))
    w = np.linalg.eigvalsh(K_R)
    c = cert.c
    t_D = float(np.min(c * (1 - epsilon) / (l2 + epsilon * c * l)) * w[0] / w[-1])
    return DwellTimeBounds(lu, ll, l2u, l2l, epsilon, t_D)


def compute_modulation_bound(bank, K):
    """``max_k ||(L_k*)^2(K)||_F``, an upper bound on ``Tr(K L_k^2(rho))`` over states."""
    K = np.asarray(K, dtype=np.complex128)
    return ModulationBound(max(float(np.linalg.norm(g.adjoint(g.adjoint(K)))) for g in _as_bank_list(bank)))


@dataclass
class A2Report:
    n_samples: int
    violations: int
    min_margin: float
    worst_state: np.ndarray = field(default=None, repr=False)

    @property
    def ok(self):
        return self.violations == 0


def sample_states(n, rng, size):
    """Mixture of Hilbert-Schmidt random states, pure states and face states.

    A third of the draws are full-rank Ginibre states, a third are pure, and a
    third are Ginibre states supported on a random set of basis vectors.  The
    last group reaches the lower-dimensional faces of the state space where
    drift conditions typically fail first.
    """
    kind = rng.integers(0, 3, size=size)
    G = rng.standard_normal((size, n, n)) + 1j * rng.standard_normal((size, n, n))
    cols = np.ones((size, n), dtype=bool)
    cols[kind == 1, 1:] = False
    rows = np.ones((size, n), dtype=bool)
    face = np.flatnonzero(kind == 2)
    if face.size:
        keep = rng.random((face.size, n)) < 0.5
        empty = ~keep.any(axis=1)
        keep[empty, rng.integers(0, n, size=int(empty.sum()))] = True
        rows[face] = keep
        ranks = rng.integers(1, n + 1, size=face.size)
        cols[face] = np.arange(n)[None, :] < ranks[:, None]
    G = G * rows[:, :, None] * cols[:, None, :]
    rho = G @ dag(G)
    return rho / np.trace(rho, axis1=1, axis2=2).real[:, None, None]


def check_A2_sampled(bank, K, d, n_samples=10_000, rng=None, tol=1e-12, batch=2000):
    """Falsification test of ``min_k Tr(K L_k(rho)) < 0`` off the target set.

    States come from :func:`sample_states`; those with ``Tr(P_R rho) <= 1e-6``
    are rejected.  Finding no violation is evidence, not proof.
    """
    rng = np.random.default_rng(rng)
    K = np.asarray(K, dtype=np.complex128)
    if K.shape[0] != d.dim:
        K = extend_R(K, d)
    A = bank.drift_operators(K)
    done, bad, worst_val, worst = 0, 0, -np.inf, None
    while done < n_samples:
        rho = sample_states(d.dim, rng, min(batch, n_samples - done))
        rho = rho[population_R(rho, d) > 1e-6]
        vals = np.einsum("kij,bji->bk", A, rho).real.min(axis=1)
        bad += int(np.sum(vals >= -tol))
        i = int(np.argmax(vals))
        if vals[i] > worst_val:
            worst_val, worst = float(vals[i]), rho[i]
        done += rho.shape[0]
    return A2Report(done, bad, -worst_val, worst)


def distance_constants(K_R, d):
    """``(c1, c2)`` with ``c1 Tr(K rho) <= ||rho - P rho P||_1 <= c2 sqrt(Tr(K rho))``."""
    K_R = as_matrix(K_R, dim=d.dim_R, name="K_R")
    w = np.linalg.eigvalsh(0.5 * (K_R + dag(K_R)))
    if w[0] <= 0:
        raise ValidationError(f"K_R is not positive definite (min eigenvalue {w[0]:.3e})")
    return 1.0 / w[-1], 3.0 * d.dim / np.sqrt(w[0])


class CertificateEstimator(BaseEstimator):
    """Estimator wrapper: ``fit`` builds the certificate for a bank and target.

    After fitting, ``transform`` maps states to ``Tr(K rho)`` and ``predict``
    returns the greedy generator index ``argmin_k Tr(K L_k(rho))``.
    """

    def __init__(self, gamma=None, gamma_search=False, epsilon=0.3):
        self.gamma = gamma
        self.gamma_search = gamma_search
        self.epsilon = epsilon

    def fit(self, bank, subspace):
        self.bank_ = bank
        self.subspace_ = subspace
        self.certificate_ = build_certificate(bank, subspace, self.gamma, self.gamma_search)
        self.bounds_ = compute_l_bounds(bank, self.certificate_, subspace, self.epsilon)
        self.modulation_ = compute_modulation_bound(bank, self.certificate_.K)
        self.c_ = self.certificate_.c
        self.K_ = self.certificate_.K
        self.t_D_ = self.bounds_.t_D
        return self

    def transform(self, states):
        check_is_fitted(self, "certificate_")
        return self.certificate_.value(np.asarray(states, dtype=np.complex128))

    def predict(self, states):
        check_is_fitted(self, "certificate_")
        return min_drift(self.bank_, self.K_, np.asarray(states, dtype=np.complex128))[1]
