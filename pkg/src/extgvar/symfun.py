"""Elementary symmetric functions of covariance spectra.

``Psi_k(V) = (k+1)/k! * E_k(lambda(V))`` where ``E_k`` is the elementary
symmetric polynomial of degree ``k`` in the eigenvalues of ``V``.  For the
covariance matrix of a measure this is the expected squared volume of the
k-simplex spanned by ``k+1`` independent draws.

The primary route is spectral: a symmetric eigendecomposition followed by
the coefficient convolution ``prod_i (1 + lambda_i t)``.  Power-sum routes
(Newton identities, the trace determinant) are kept as cross-checks only;
their alternating sums lose digits on ill-conditioned spectra.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError, SingularMatrixError

SYMMETRY_RTOL = 1e-12
NEGATIVE_EIG_RTOL = 1e-10
EPS = float(np.finfo(float).eps)
SINGULAR_RTOL = 1e-12


class CovMatrix:
    """Symmetric nonnegative-definite matrix with a cached spectrum.

    Parameters
    ----------
    entries : array_like, shape (d, d)
        Must be symmetric to ``1e-12 * max(1, |V_ij|)``.  The stored matrix
        is the exact symmetrisation ``(V + V.T) / 2``.

    Notes
    -----
    The spectrum is computed on first access.  Eigenvalues in
    ``[-1e-10 * lambda_max, 0)`` are clamped to zero; anything more
    negative raises :class:`DomainError`.  Eigenvalues within the roundoff
    band ``d * eps * lambda_max`` of the decomposition are also set to zero
    (the usual numerical-rank cut), so ``Psi_k`` vanishes exactly for
    ``k`` above the rank.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise DomainError(f"covariance must be a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("covariance has non-finite entries")
        asym = np.abs(a - a.T)
        if np.any(asym > SYMMETRY_RTOL * np.maximum(1.0, np.abs(a))):
            raise DomainError(f"covariance is not symmetric (max asymmetry {asym.max():.3g})")
        a = 0.5 * (a + a.T)
        a.flags.writeable = False
        self._a = a

    @property
    def dim(self) -> int:
        return self._a.shape[0]

    @property
    def entries(self) -> np.ndarray:
        return self._a

    def __array__(self, dtype=None, copy=None):
        return np.array(self._a, dtype=dtype)

    def __repr__(self):
        return f"CovMatrix(dim={self.dim})"

    @cached_property
    def _eigh(self):
        w, u = np.linalg.eigh(self._a)
        w, u = w[::-1].copy(), u[:, ::-1].copy()
        lam_max = max(w[0], 0.0)
        floor = -NEGATIVE_EIG_RTOL * lam_max
        if w[-1] < floor:
            raise DomainError(f"matrix is not nonnegative definite (lambda_min = {w[-1]:.3g})")
        w[w <= self.dim * EPS * lam_max] = 0.0
        w.flags.writeable = False
        u.flags.writeable = False
        return w, u

    @property
    def spectrum(self) -> np.ndarray:
        """Eigenvalues, nonincreasing, clamped at zero."""
        return self._eigh[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eigh[1]

    @property
    def rank(self) -> int:
        w = self.spectrum
        if w[0] == 0.0:
            return 0
        return int(np.sum(w > SINGULAR_RTOL * w[0]))

    def is_singular(self) -> bool:
        w = self.spectrum
        return not w[-1] > SINGULAR_RTOL * w[0]

    def inverse(self) -> np.ndarray:
        if self.is_singular():
            raise SingularMatrixError("covariance matrix is singular")
        w, u = self._eigh
        return (u / w) @ u.T


def as_cov(v) -> CovMatrix:
    return v if isinstance(v, CovMatrix) else CovMatrix(v)


@dataclass(frozen=True)
class PsiValue:
    """``Psi_k`` together with its logarithm (``-inf`` when it vanishes)."""

    k: int
    value: float
    log_value: float

    def __float__(self):
        return self.value


def esf_all(eigs) -> np.ndarray:
    """Return ``[E_0, E_1, ..., E_d]`` of the given values.

    Coefficients of ``prod_i (1 + x_i t)`` built by convolving one factor at a
    time; no subset enumeration.
    """
    x = np.asarray(eigs, dtype=float).ravel()
    e = np.zeros(x.size + 1)
    e[0] = 1.0
    for j, xj in enumerate(x):
        e[1:j + 2] = e[1:j + 2] + xj * e[:j + 1]
    return e


def elem_sym(eigs, k: int) -> float:
    """Elementary symmetric function ``E_k`` of ``eigs`` (``E_0 = 1``)."""
    x = np.asarray(eigs, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise DomainError("eigenvalues must be finite")
    if not 0 <= k <= x.size:
        raise DomainError(f"k={k} outside 0..{x.size}")
    return float(esf_all(x)[k])


def _log_esf(eigs, k: int) -> float:
    # E_k(x) = s^k E_k(x / s) keeps the convolution in range for tiny or huge spectra
    x = np.asarray(eigs, dtype=float)
    if k == 0:
        return 0.0
    s = float(np.max(np.abs(x))) if x.size else 0.0
    if s == 0.0:
        return -math.inf
    ek = esf_all(x / s)[k]
    if ek <= 0.0:
        return -math.inf
    return k * math.log(s) + math.log(ek)


def psi_factor(k: int) -> float:
    """The constant ``(k+1)/k!`` relating ``Psi_k`` to ``E_k``."""
    return (k + 1) / math.factorial(k)


def _check_k(k, d, lo=1):
    if isinstance(k, bool) or int(k) != k:
        raise DomainError(f"k must be an integer, got {k!r}")
    if not lo <= k <= d:
        raise DomainError(f"k={k} outside {lo}..{d}")
    return int(k)


def psi(v, k: int) -> PsiValue:
    """``Psi_k(V) = (k+1)/k! * E_k(spectrum(V))`` for ``1 <= k <= d``."""
    v = as_cov(v)
    k = _check_k(k, v.dim)
    lam = v.spectrum
    value = psi_factor(k) * esf_all(lam)[k]
    log_value = math.log(psi_factor(k)) + _log_esf(lam, k)
    return PsiValue(k, float(value), float(log_value))


def psi_spectral(lam, k: int) -> float:
    """``Psi_k`` from a nonnegative spectrum; ``k = 0`` gives 1."""
    return psi_factor(k) * float(esf_all(lam)[k])


def grad_psi(v, k: int, method: str = "spectral") -> np.ndarray:
    """Gradient of ``Psi_k`` at ``V``.

    The default ``method="spectral"`` evaluates
    ``U diag(E_{k-1}(lambda without lambda_i)) U^T``.  ``method="horner"``
    accumulates the matrix polynomial
    ``grad E_k[V] = sum_{i<k} (-1)^i E_{k-i-1}(V) V^i`` by Horner's rule; its
    alternating sum cancels badly in the small-eigenvalue directions once
    ``cond(V)`` exceeds about 100, so it serves as a cross-check only.
    ``k = 0`` returns the zero matrix.
    """
    v = as_cov(v)
    d = v.dim
    k = _check_k(k, d, lo=0)
    if k == 0:
        return np.zeros((d, d))
    if method == "horner":
        e = esf_all(v.spectrum)
        a = v.entries
        b = (-1.0) ** (k - 1) * np.eye(d)
        for i in range(k - 2, -1, -1):
            b = b @ a
            b[np.diag_indices(d)] += (-1.0) ** i * e[k - i - 1]
        g = b
    elif method == "spectral":
        w, u = v.spectrum, v.eigenvectors
        coef = np.array([esf_all(np.delete(w, i))[k - 1] for i in range(d)])
        g = (u * coef) @ u.T
    else:
        raise DomainError(f"unknown gradient method {method!r}")
    g = psi_factor(k) * 0.5 * (g + g.T)
    return g


def psi_via_complement(v, k: int) -> float:
    """``Psi_k(V)`` through ``E_k(V) = det(V) E_{d-k}(V^{-1})``."""
    v = as_cov(v)
    d = v.dim
    k = _check_k(k, d - 1) if d > 1 else _check_k(k, 0)
    if v.is_singular():
        raise SingularMatrixError("complement route needs a nonsingular matrix")
    vinv = np.linalg.inv(v.entries)
    inv_eigs = np.linalg.eigvalsh(0.5 * (vinv + vinv.T))
    det = float(np.prod(v.spectrum))
    return psi_factor(k) * det * float(esf_all(inv_eigs)[d - k])


def phi_p(v, p: float) -> float:
    """Kiefer's ``Phi_p`` of a covariance matrix.

    ``p = inf`` gives ``lambda_max``, ``p = -inf`` gives ``lambda_min``,
    ``p = 0`` gives ``det^{1/d}``; otherwise ``(tr(V^p)/d)^{1/p}``.  For
    ``p < 0`` and singular ``V`` the continuous extension 0 is returned.
    """
    v = as_cov(v)
    lam = v.spectrum
    d = v.dim
    if p == math.inf:
        return float(lam[0])
    if p == -math.inf:
        return float(lam[-1]) if not v.is_singular() else 0.0
    if p <= 0 and v.is_singular():
        return 0.0
    if p == 0:
        return float(math.exp(np.mean(np.log(lam))))
    return float(np.mean(lam ** p) ** (1.0 / p))


# -- power-sum cross-checks --------------------------------------------------

def power_sums(v, kmax: int) -> np.ndarray:
    """``[tr(V), tr(V^2), ..., tr(V^kmax)]`` from explicit matrix powers."""
    a = np.asarray(as_cov(v).entries)
    out = np.empty(kmax)
    p = np.eye(a.shape[0])
    for i in range(kmax):
        p = p @ a
        out[i] = np.trace(p)
    return out


def _exact_power_sums(a: np.ndarray, kmax: int):
    # V = A_int * 2^shift exactly, so tr(V^i) = tr(A_int^i) * 2^(i*shift) with integer traces
    fr = [Fraction(float(x)) for x in a.ravel()]
    shift = min((math.frexp(float(x))[1] - 53 for x in a.ravel() if x != 0), default=0)
    scale = Fraction(2) ** -shift
    ints = np.array([int(f * scale) for f in fr], dtype=object).reshape(a.shape)
    out = []
    p = ints.copy()
    for i in range(kmax):
        if i:
            p = p.dot(ints)
        out.append(int(np.trace(p)))
    return out, shift


def esf_newton(v, k: int, exact: bool = True) -> float:
    """``E_k(V)`` by Newton's identities on the power sums ``tr(V^i)``.

    The recurrence alternates in sign and amplifies rounding in the power
    sums, so by default the power sums and the recurrence run in exact
    integer/rational arithmetic on the stored entries; only the final
    conversion rounds.  ``exact=False`` uses floating point throughout.
    """
    v = as_cov(v)
    k = _check_k(k, v.dim, lo=0)
    if not exact:
        p = power_sums(v, k)
        e = [1.0]
        for j in range(1, k + 1):
            e.append(sum((-1) ** (i - 1) * e[j - i] * p[i - 1] for i in range(1, j + 1)) / j)
        return e[k]
    p, shift = _exact_power_sums(v.entries, k)
    e = [Fraction(1)]
    for j in range(1, k + 1):
        e.append(sum((-1) ** (i - 1) * e[j - i] * p[i - 1] for i in range(1, j + 1)) / j)
    # E_k of the integer matrix, rescaled by 2^(k * shift)
    return float(e[k] * Fraction(2) ** (k * shift))


def psi_det_form(v, k: int) -> float:
    """``Psi_k(V)`` from the k-by-k determinant of power sums.

    Lower Hessenberg with ``tr(V^{i-j+1})`` on and below the diagonal and
    ``k-1, k-2, ..., 1`` on the superdiagonal.
    """
    v = as_cov(v)
    k = _check_k(k, v.dim)
    p = power_sums(v, k)
    a = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            a[i, j] = p[i - j]
        if i + 1 < k:
            a[i, i + 1] = k - 1 - i
    return (k + 1) / math.factorial(k) ** 2 * float(np.linalg.det(a))
