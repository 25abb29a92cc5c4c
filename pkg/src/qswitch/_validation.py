"""Input validation helpers shared by all modules."""

import numpy as np

TOL_HERM = 1e-9
TOL_TR = 1e-9
TOL_PSD = 1e-9
TOL_ROUNDTRIP = 1e-12


class ValidationError(ValueError):
    pass


class DimensionMismatch(ValidationError):
    pass


def as_matrix(x, dim=None, name="matrix"):
    """Return ``x`` as a square complex128 array, optionally of size ``dim``."""
    a = np.asarray(x, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise DimensionMismatch(f"{name} has dimension {a.shape[0]}, expected {dim}")
    return a


def check_hermitian(x, tol=TOL_HERM, name="matrix"):
    a = as_matrix(x, name=name)
    err = np.linalg.norm(a - a.conj().T)
    if err > tol:
        raise ValidationError(f"{name} is not Hermitian (residual {err:.3e})")
    return a


def check_density_matrix(rho, dim=None, tol_herm=TOL_HERM, tol_psd=TOL_PSD, tol_tr=TOL_TR):
    """Validate Hermiticity, positivity and unit trace; returns the array."""
    a = as_matrix(rho, dim=dim, name="density matrix")
    check_hermitian(a, tol_herm, name="density matrix")
    tr = np.trace(a).real
    if abs(tr - 1.0) > tol_tr:
        raise ValidationError(f"density matrix trace is {tr!r}, expected 1")
    lam = np.linalg.eigvalsh(0.5 * (a + a.conj().T))[0]
    if lam < -tol_psd:
        raise ValidationError(f"density matrix has negative eigenvalue {lam:.3e}")
    return a


def check_probability_vector(gamma, tol=1e-12):
    g = np.asarray(gamma, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValidationError("weights must be a non-empty 1-d vector")
    if np.any(g <= 0) or np.any(g >= 1) and g.size > 1:
        raise ValidationError(f"weights must lie in (0, 1), got {g}")
    if abs(g.sum() - 1.0) > tol:
        raise ValidationError(f"weights must sum to 1, got {g.sum()!r}")
    return g
