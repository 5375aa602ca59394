"""Orthonormal bases and projection residuals for the subspace head."""

import numpy as np

from .errors import ShapeError

RANK_TOL = 1e-10


def orthonormal_basis(columns):
    """Orthonormal basis of the column space of a d x m matrix.

    Rank is determined by singular values above RANK_TOL times the largest.
    An all-zero input yields an empty (d x 0) basis.
    """
    a = np.asarray(columns, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {a.shape}")
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[0], 0))
    r = int(np.sum(s > RANK_TOL * s[0]))
    return u[:, :r]


def project_residual(basis, v):
    """Squared norm of the component of v orthogonal to span(basis).

    The basis is assumed orthonormal (caller contract). An empty basis
    gives the full squared norm of v.
    """
    b = np.asarray(basis, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if b.ndim != 2 or v.ndim != 1 or b.shape[0] != v.shape[0]:
        raise ShapeError(f"basis {b.shape} incompatible with vector {v.shape}")
    if b.shape[1] == 0:
        return float(np.sum(v * v))
    r = v - b @ (b.T @ v)
    return float(np.sum(r * r))
