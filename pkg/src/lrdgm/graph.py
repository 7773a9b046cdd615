"""Conditional dependency structure read off a precision matrix."""

from __future__ import annotations

import numpy as np

from .spd import SpdMatrix

# Default edge threshold on |conditional correlation|.
DEFAULT_EDGE_THRESHOLD = 0.05


def _dense(Theta) -> np.ndarray:
    if isinstance(Theta, SpdMatrix):
        return Theta.M
    return np.asarray(Theta, dtype=float)


def conditional_correlation(Theta) -> np.ndarray:
    """Matrix of partial correlations -Theta_ql / sqrt(Theta_qq Theta_ll).

    The diagonal is set to zero; off-diagonal entries lie in [-1, 1] for any
    positive definite input.
    """
    Th = _dense(Theta)
    if Th.ndim != 2 or Th.shape[0] != Th.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Th.shape}")
    d = np.diagonal(Th)
    if np.any(d <= 0):
        raise ValueError("diagonal must be strictly positive")
    s = np.sqrt(d)
    C = -Th / np.outer(s, s)
    np.fill_diagonal(C, 0.0)
    return C


def threshold_edges(corr: np.ndarray, tau: float = DEFAULT_EDGE_THRESHOLD) -> np.ndarray:
    """Adjacency of entries with |corr| >= tau; zero diagonal, dtype int."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    C = np.asarray(corr, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {C.shape}")
    A = (np.abs(C) >= tau).astype(int)
    np.fill_diagonal(A, 0)
    return A
