"""Finitely supported probability measures on R^d."""

from __future__ import annotations

import numpy as np

from .errors import DomainError
from .symfun import CovMatrix

WEIGHT_SUM_TOL = 1e-12


class DiscreteMeasure:
    """Weights on distinct support points.

    Parameters
    ----------
    support : array_like, shape (m, d)
    weights : array_like, shape (m,)
        Nonnegative, summing to one within ``1e-12``.
    """

    def __init__(self, support, weights):
        x = np.array(support, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        w = np.array(weights, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] == 0:
            raise DomainError("support must be a non-empty (m, d) array")
        if w.shape[0] != x.shape[0]:
            raise DomainError(f"{w.shape[0]} weights for {x.shape[0]} support points")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise DomainError("support and weights must be finite")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        if x.shape[0] > 1 and np.unique(x, axis=0).shape[0] != x.shape[0]:
            raise DomainError("support points must be pairwise distinct")
        x.flags.writeable = False
        w.flags.writeable = False
        self.support = x
        self.weights = w

    @classmethod
    def uniform(cls, support):
        x = np.asarray(support, dtype=float)
        m = x.shape[0]
        return cls(x, np.full(m, 1.0 / m))

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def __len__(self):
        return self.support.shape[0]

    def __repr__(self):
        return f"DiscreteMeasure(m={len(self)}, d={self.dim})"


def weighted_moments(points, weights):
    """Mean and covariance of the weighted point set as plain arrays."""
    x = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    mean = w @ x
    y = x - mean
    cov = (y.T * w) @ y
    return mean, 0.5 * (cov + cov.T)


def measure_moments(mu: DiscreteMeasure):
    """``(E_mu, V_mu)`` with ``V_mu = sum_i w_i (x_i - E_mu)(x_i - E_mu)^T``."""
    mean, cov = weighted_moments(mu.support, mu.weights)
    return mean, CovMatrix(cov)
