"""Input validation helpers and the package error taxonomy."""

import numpy as np


class ConfigError(ValueError):
    """Malformed configuration input (file schema, missing keys, bad values)."""


class NumericError(RuntimeError):
    """A numerical procedure failed (divergence, budget exceeded, bad conditioning)."""


class SingularityError(NumericError):
    """Configuration too close to a task singularity for the requested operation.

    Attributes:
        margin: the offending singularity measure (e.g. det(J Jᵀ) or the
            smallest singular value), when available.
    """

    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


def as_vector(x, n=None, name="x"):
    """Coerce to a finite 1-d float array, optionally of fixed length."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v[None]
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-d, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_batch(Q, n, name="Q"):
    """Coerce to a finite (k, n) float array; a single vector becomes k=1."""
    A = np.asarray(Q, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"{name} must have shape (k, {n}), got {np.shape(Q)}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def as_matrix(M, shape=None, name="M"):
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {A.shape}")
    if shape is not None and A.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def as_spd(M, name="A", sym_tol=1e-8):
    """Validate a symmetric positive definite matrix; returns the symmetrized copy."""
    A = as_matrix(M, name=name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got {A.shape}")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A - A.T).max() > sym_tol * scale:
        raise ValueError(f"{name} is not symmetric")
    A = 0.5 * (A + A.T)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not positive definite") from None
    return A


def wrap_angle(a):
    """Wrap angles to [-pi, pi)."""
    return np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
