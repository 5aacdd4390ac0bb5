"""Unbiased estimation of psi_k from an i.i.d. sample.

The U-statistic averaging squared simplex volumes over all ``(k+1)``-subsets
of the sample collapses to a scaled ``Psi_k`` of the empirical covariance::

    psi_hat = (n-1)^k (n-k-1)! / (n-1)! * Psi_k(V_hat)

The subset average itself is kept as :func:`u_stat_oracle` for testing.
The asymptotic variance ``(k+1)^2 omega / n`` of the estimator is available
through the :class:`OmegaSpec` family.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InsufficientSampleError, SingularMatrixError, TooLargeError
from .measure import DiscreteMeasure, weighted_moments
from .symfun import CovMatrix, as_cov, esf_all, grad_psi, psi, psi_factor

ORACLE_MAX_SUBSETS = 5_000_000


class Sample:
    """``n`` observations in ``R^d`` stored as an ``(n, d)`` array."""

    def __init__(self, data):
        x = np.array(data, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise DomainError(f"sample must be a non-empty (n, d) array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise DomainError("sample has non-finite entries")
        x.flags.writeable = False
        self.data = x

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __repr__(self):
        return f"Sample(n={self.n}, d={self.dim})"


def as_sample(s) -> Sample:
    return s if isinstance(s, Sample) else Sample(s)


@dataclass(frozen=True)
class EstimateReport:
    k: int
    n: int
    psi_hat: float
    scale_factor: float
    empirical_cov: CovMatrix

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "psiHat": self.psi_hat,
            "scaleFactor": self.scale_factor,
            "cov": self.empirical_cov.entries.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EstimateReport":
        rep = cls(
            k=int(data["k"]),
            n=int(data["n"]),
            psi_hat=float(data["psiHat"]),
            scale_factor=float(data["scaleFactor"]),
            empirical_cov=CovMatrix(data["cov"]),
        )
        rep.validate()
        return rep

    def validate(self) -> None:
        expected = self.scale_factor * psi(self.empirical_cov, self.k).value
        if abs(self.psi_hat - expected) > 1e-12 * max(abs(expected), 1e-300):
            raise DomainError("psiHat does not match scaleFactor * Psi_k(cov)")


def simplex_squared_volume(points) -> float:
    """Squared volume of the simplex spanned by ``k+1`` points in ``R^d``.

    ``det(G^T G) / (k!)^2`` with ``G`` the ``d x k`` matrix of edges from the
    first vertex.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DomainError("need at least two points given as rows")
    k, d = x.shape[0] - 1, x.shape[1]
    if k > d:
        raise DomainError(f"a {k}-simplex does not fit in R^{d}")
    g = x[1:] - x[0]
    det = float(np.linalg.det(g @ g.T))
    return max(det, 0.0) / math.factorial(k) ** 2


def empirical_moments(s):
    """Sample mean and unbiased covariance ``1/(n-1) sum (x_i - m)(x_i - m)^T``.

    Rows are reduced in lexicographic order, so the result is bit-identical
    under any permutation of the observations.  Differences from the first
    sorted row are formed before averaging; they round relative to the
    spread of the data rather than its offset, and an exactly representable
    shift of all rows leaves the covariance bit-identical.
    """
    s = as_sample(s)
    if s.n < 2:
        raise InsufficientSampleError(f"need n >= 2 observations, got {s.n}")
    x = s.data[np.lexsort(s.data.T[::-1])]
    y = x - x[0]
    offset = y.mean(axis=0)
    z = y - offset
    cov = z.T @ z / (s.n - 1)
    return x[0] + offset, CovMatrix(0.5 * (cov + cov.T))


def _check_n(n, k):
    if n < k + 1:
        raise InsufficientSampleError(f"need n >= k+1 = {k + 1} observations, got n={n}")


def scale_factor(n: int, k: int) -> float:
    """``(n-1)^k (n-k-1)! / (n-1)!``, evaluated as ``prod_{j=1..k} (n-1)/(n-j)``."""
    if k < 0:
        raise DomainError(f"k={k} must be nonnegative")
    _check_n(n, k)
    out = 1.0
    for j in range(1, k + 1):
        out *= (n - 1) / (n - j)
    return out


def estimate_psi(s, k: int) -> EstimateReport:
    """Minimum-variance unbiased estimate of ``psi_k`` from a sample."""
    s = as_sample(s)
    if not 1 <= k <= s.dim:
        raise DomainError(f"k={k} outside 1..{s.dim}")
    _check_n(s.n, k)
    _, cov = empirical_moments(s)
    c = scale_factor(s.n, k)
    return EstimateReport(k=k, n=s.n, psi_hat=c * psi(cov, k).value,
                          scale_factor=c, empirical_cov=cov)


def estimate_psi_complement(s, k: int) -> float:
    """Unbiased estimate of ``psi_{d-k}`` through ``det(V_hat) Psi_k(V_hat^{-1})``.

    Requires a nonsingular empirical covariance, unlike :func:`estimate_psi`.
    """
    s = as_sample(s)
    d = s.dim
    if not 0 <= k <= d - 1:
        raise DomainError(f"k={k} outside 0..{d - 1}")
    _check_n(s.n, d - k)
    _, cov = empirical_moments(s)
    if cov.is_singular():
        raise SingularMatrixError("empirical covariance is singular")
    vinv = cov.inverse()
    inv_eigs = np.linalg.eigvalsh(0.5 * (vinv + vinv.T))
    psi_k_inv = psi_factor(k) * esf_all(inv_eigs)[k]
    det = float(np.prod(cov.spectrum))
    const = (d - k + 1) * math.factorial(k) / ((k + 1) * math.factorial(d - k))
    return scale_factor(s.n, d - k) * const * det * float(psi_k_inv)


def u_stat_oracle(s, k: int, chunk: int = 20000) -> float:
    """Average squared k-simplex volume over all ``(k+1)``-subsets of the sample.

    Brute force; refuses more than ``5e6`` subsets.  Summation is exactly
    rounded so the result does not depend on evaluation order.
    """
    s = as_sample(s)
    n, d = s.n, s.dim
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    _check_n(n, k)
    total = math.comb(n, k + 1)
    if total > ORACLE_MAX_SUBSETS:
        raise TooLargeError(f"{total} subsets exceed the oracle guard of {ORACLE_MAX_SUBSETS}")
    x = s.data
    combos = itertools.combinations(range(n), k + 1)
    parts = []
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if idx.size == 0:
            break
        g = x[idx[:, 1:]] - x[idx[:, :1]]
        dets = np.linalg.det(g @ g.transpose(0, 2, 1))
        parts.append(np.maximum(dets, 0.0))
    vols = np.concatenate(parts) / math.factorial(k) ** 2
    return math.fsum(vols) / total


# -- coincidence counts -------------------------------------------------------

def beta_coincidence(i_set, j_set) -> int:
    """Number of indices shared by two index sets."""
    return len(set(i_set) & set(j_set))


def beta_dk(d: int, k: int) -> int:
    """``sum_{I,J} |I & J|`` over ordered pairs of k-subsets of ``{1..d}``.

    Closed form ``(d-k+1)^2 / d * C(d, k-1)^2``; exact integer arithmetic.
    """
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    num = (d - k + 1) ** 2 * math.comb(d, k - 1) ** 2
    q, r = divmod(num, d)
    assert r == 0
    return q


def beta_dk_enumerate(d: int, k: int) -> int:
    """Brute-force ``sum_{I,J} |I & J|``: every pair's overlap from the subset incidence matrix."""
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    inc = np.zeros((math.comb(d, k), d), dtype=np.int64)
    for row, c in enumerate(itertools.combinations(range(d), k)):
        inc[row, list(c)] = 1
    return int(np.sum(inc @ inc.T))


# -- asymptotic variance ----------------------------------------------------------

def _adjugate(a: np.ndarray) -> np.ndarray:
    # SVD form adj(A) = det(U V^T) V diag(prod_{j != i} s_j) U^T; fine for singular A
    k = a.shape[0]
    if k == 1:
        return np.ones((1, 1))
    u, sv, vt = np.linalg.svd(a)
    prods = np.array([np.prod(np.delete(sv, i)) for i in range(k)])
    sign = np.linalg.det(u) * np.linalg.det(vt)
    return sign * (vt.T * prods) @ u.T


def _subsets(d, k):
    return [np.array(c) for c in itertools.combinations(range(d), k)]


class OmegaSpec:
    """Describes the sampling measure for ``omega = var[h(x)]``."""

    def omega(self, k: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class NormalOmega(OmegaSpec):
    """Normal measure with covariance ``cov``."""

    cov: object

    def omega(self, k):
        v = as_cov(self.cov)
        a = v.entries
        d = v.dim
        _k_range(k, d)
        subs = _subsets(d, k)
        adj = [_adjugate(a[np.ix_(i, i)]) for i in subs]
        terms = []
        for ii, i in enumerate(subs):
            for jj, j in enumerate(subs):
                vij = a[np.ix_(i, j)]
                terms.append(np.trace(adj[jj] @ vij.T @ adj[ii] @ vij))
        return 2.0 * math.fsum(terms) / math.factorial(k) ** 2


@dataclass(frozen=True)
class IidCoordinatesOmega(OmegaSpec):
    """Coordinates i.i.d. with variance ``sigma2`` and standardised fourth moment."""

    sigma2: float
    fourth_moment: float
    dim: int

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DomainError("sigma2 must be positive")
        if not self.fourth_moment >= 1:
            raise DomainError("standardised fourth moment must be >= 1")
        if self.dim < 1:
            raise DomainError("dim must be >= 1")

    def omega(self, k):
        _k_range(k, self.dim)
        return (self.sigma2 ** (2 * k) / math.factorial(k) ** 2
                * (self.fourth_moment - 1.0) * beta_dk(self.dim, k))


@dataclass(frozen=True)
class DiagonalNormalOmega(OmegaSpec):
    """Normal measure with diagonal covariance ``diag(variances)``."""

    variances: tuple

    def __post_init__(self):
        lam = np.asarray(self.variances, dtype=float)
        if lam.ndim != 1 or lam.size == 0 or np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise DomainError("variances must be a non-empty vector of nonnegative reals")

    def omega(self, k):
        lam = np.asarray(self.variances, dtype=float)
        _k_range(k, lam.size)
        # sum_{I,J} |I & J| prod_I prod_J = sum_e (lambda_e E_{k-1}(lambda without e))^2
        per_index = [lam[e] * esf_all(np.delete(lam, e))[k - 1] for e in range(lam.size)]
        return 2.0 * math.fsum(p * p for p in per_index) / math.factorial(k) ** 2


@dataclass(frozen=True)
class DiscreteOmega(OmegaSpec):
    """Exact omega for a finitely supported measure.

    Evaluates the sum over index-set pairs ``(I, J)`` with the expectation as
    a finite weighted sum.  ``det(V_II) V_II^{-1}`` is taken as the adjugate,
    so singular submatrices contribute their (zero) limit instead of failing.
    """

    measure: DiscreteMeasure

    def omega(self, k):
        mu = self.measure
        _k_range(k, mu.dim)
        mean, cov = weighted_moments(mu.support, mu.weights)
        y = mu.support - mean
        subs = _subsets(mu.dim, k)
        dets = np.array([np.linalg.det(cov[np.ix_(i, i)]) for i in subs])
        # a[x, I] = det(V_II) * y_I^T V_II^{-1} y_I
        a = np.column_stack([
            np.einsum("ni,ij,nj->n", y[:, i], _adjugate(cov[np.ix_(i, i)]), y[:, i]) for i in subs
        ])
        second = (a.T * mu.weights) @ a
        pair = second - k * k * np.outer(dets, dets)
        return float(np.sum(pair)) / math.factorial(k) ** 2


@dataclass(frozen=True)
class MonteCarloOmega(OmegaSpec):
    """Monte-Carlo omega from draws of a measure with known moments.

    ``sampler(rng, m)`` returns an ``(m, d)`` array.  ``h(x)`` is evaluated in
    closed form at each draw, ``h(x) = (E_k(V) + y^T grad E_k[V] y) / k!``
    with ``y = x - mean``; only the outer variance is simulated.
    """

    sampler: Callable
    mean: object
    cov: object
    m: int = 100_000
    seed: int = 0

    def estimate(self, k) -> tuple[float, float]:
        v = as_cov(self.cov)
        _k_range(k, v.dim)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, k])))
        x = np.asarray(self.sampler(rng, self.m), dtype=float)
        h = conditional_kernel_mean(x, self.mean, v, k)
        m = h.size
        c = h - h.mean()
        var = float(c @ c) / (m - 1)
        mu4 = float(np.mean(c ** 4))
        se = math.sqrt(max(mu4 - var * var, 0.0) / m)
        return var, se

    def omega(self, k):
        return self.estimate(k)[0]


def _k_range(k, d):
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")


def conditional_kernel_mean(points, mean, cov, k: int) -> np.ndarray:
    """``h(x) = E{ V_k^2(x, x_2, ..., x_{k+1}) }`` with the other vertices drawn from mu.

    Depends on mu only through its mean and covariance.
    """
    v = as_cov(cov)
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = x - np.asarray(mean, dtype=float)
    ek = esf_all(v.spectrum)[k]
    g = grad_psi(v, k) / psi_factor(k)
    return (ek + np.einsum("ni,ij,nj->n", y, g, y)) / math.factorial(k)


def omega(spec: OmegaSpec, k: int) -> float:
    """``omega = var[h(x)]`` for the measure described by ``spec``."""
    return spec.omega(k)


def asymptotic_variance(spec: OmegaSpec, k: int, n: int) -> float:
    """Leading term ``(k+1)^2 omega / n`` of ``var[psi_hat]``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return (k + 1) ** 2 * omega(spec, k) / n
