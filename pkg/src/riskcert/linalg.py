"""Dense symmetric-matrix helpers."""

import numpy as np

from .errors import DimensionError, DomainError


def sym(a):
    """Return the symmetric part of a square matrix."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def as_sym(a, dim=None, name="matrix"):
    """Validate a square matrix and return an exactly symmetric copy.

    The upper triangle is authoritative, so the result satisfies
    ``out[i, j] == out[j, i]`` bitwise.
    """
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise DimensionError(f"{name} must be {dim}x{dim}, got {a.shape}")
    iu = np.triu_indices(a.shape[0], 1)
    a[(iu[1], iu[0])] = a[iu]
    return a


def eigh(a):
    """Eigen-decomposition of a symmetric matrix, eigenvalues ascending."""
    return np.linalg.eigh(sym(a))


def psd_sqrt(a):
    w, u = eigh(a)
    if w[0] < -1e-12 * max(1.0, abs(w[-1])):
        raise DomainError("matrix is not positive semidefinite")
    return sym((u * np.sqrt(np.clip(w, 0.0, None))) @ u.T)


def project_psd(a):
    """Frobenius projection onto the PSD cone (eigenvalue clipping)."""
    w, u = eigh(a)
    return sym((u * np.clip(w, 0.0, None)) @ u.T)


def require_pd(a, name="matrix"):
    """Cholesky-certify positive definiteness; return the factor."""
    try:
        return np.linalg.cholesky(sym(a))
    except np.linalg.LinAlgError:
        raise DomainError(f"{name} is not positive definite") from None


def spectral_norm_sym(a):
    return float(np.max(np.abs(np.linalg.eigvalsh(sym(a)))))


def blockmat(H, h):
    """The bordered matrix [[H, h], [h^T, 0]]."""
    d = H.shape[0]
    out = np.zeros((d + 1, d + 1))
    out[:d, :d] = H
    out[:d, d] = h
    out[d, :d] = h
    return out


def sym_basis_dim(n):
    return n * (n + 1) // 2
