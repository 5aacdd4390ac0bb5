"""Maximum-diversity measures on a finite candidate set.

A measure ``mu`` maximises ``psi_k`` over measures on the candidates iff its
directional score

    s(x) = (x - E_mu)^T grad Psi_k[V_mu] (x - E_mu) / Psi_k(V_mu)

satisfies ``max_x s(x) <= k``, with equality on the support of ``mu``.
Equivalently the ellipsoid ``{x : (x - E_mu)^T M (x - E_mu) <= 1}`` with
``M = grad Psi_k / (k Psi_k)`` encloses every candidate; that ellipsoid is
the dual certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _simplex
from .errors import DegenerateInputError, DegenerateMeasureError, DomainError, SingularMatrixError
from .measure import DiscreteMeasure, measure_moments, weighted_moments
from .symfun import CovMatrix, as_cov, esf_all, grad_psi, psi, psi_factor, psi_spectral

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class DualCertificate:
    """Enclosing ellipsoid ``{x : (x - center)^T M (x - center) <= 1}``."""

    M: np.ndarray
    center: np.ndarray
    trace_residual: float
    containment_slack: float
    polar_value: float
    dual_product: float

    def to_dict(self):
        return {
            "M": self.M.tolist(),
            "center": self.center.tolist(),
            "traceResidual": self.trace_residual,
            "containmentSlack": self.containment_slack,
            "polarValue": self.polar_value,
            "dualProduct": self.dual_product,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["M"], dtype=float), np.array(data["center"], dtype=float),
                   float(data["traceResidual"]), float(data["containmentSlack"]),
                   float(data["polarValue"]), float(data["dualProduct"]))


@dataclass(frozen=True)
class CertificateReport:
    """Optimality summary for a measure against a candidate set.

    ``gap`` is ``max score - k`` over all candidates; ``worst_point`` is the
    candidate attaining it.
    """

    k: int
    gap: float
    worst_point: int
    support_equality_residual: float
    dual: Optional[DualCertificate] = None
    converged: bool = True
    iterations: int = 0
    history: tuple = field(default=(), repr=False)

    def certified(self, tol=DEFAULT_TOL) -> bool:
        return self.gap <= tol

    def to_dict(self):
        out = {
            "k": self.k,
            "gap": self.gap,
            "worstPoint": self.worst_point,
            "supportEqualityResidual": self.support_equality_residual,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.dual is not None:
            out["dual"] = self.dual.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        dual = data.get("dual")
        rep = cls(int(data["k"]), float(data["gap"]), int(data["worstPoint"]),
                  float(data["supportEqualityResidual"]),
                  DualCertificate.from_dict(dual) if dual is not None else None,
                  bool(data.get("converged", True)), int(data.get("iterations", 0)))
        if rep.support_equality_residual < 0 or rep.worst_point < 0:
            raise DomainError("invalid certificate report")
        return rep


def _candidates(candidates):
    x = np.array(candidates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise DomainError("candidates must be a non-empty (m, d) array")
    if not np.all(np.isfinite(x)):
        raise DomainError("candidates must be finite")
    return x


def _state(mu: DiscreteMeasure, k: int):
    mean, cov = measure_moments(mu)
    if not 1 <= k <= mu.dim:
        raise DomainError(f"k={k} outside 1..{mu.dim}")
    value = psi_spectral(cov.spectrum, k)
    if not value > 0:
        raise DegenerateMeasureError(f"psi_{k} of the measure is zero")
    return mean, cov, value


def directional_score(mu: DiscreteMeasure, x, k: int):
    """``(x - E)^T grad Psi_k[V] (x - E) / Psi_k(V)``; vectorised over rows of ``x``."""
    mean, cov, value = _state(mu, k)
    g = grad_psi(cov, k)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    y = pts - mean
    s = np.einsum("ni,ij,nj->n", y, g, y) / value
    return float(s[0]) if np.ndim(x) == 1 else s


def optimality_gap(mu: DiscreteMeasure, candidates, k: int) -> CertificateReport:
    """Equivalence-theorem certificate of ``mu`` over ``candidates``."""
    x = _candidates(candidates)
    s = directional_score(mu, x, k)
    s_supp = directional_score(mu, mu.support, k)
    j = int(np.argmax(s))
    return CertificateReport(k=k, gap=float(s[j] - k), worst_point=j,
                             support_equality_residual=float(np.max(np.abs(s_supp - k))))


def potential(mu: DiscreteMeasure, x, k: int):
    """``psi_k(mu, ..., mu, delta_x)``: mean squared volume with one vertex pinned at ``x``.

    From the directional derivative toward ``delta_x``,
    ``F = tr(grad Psi_k[V] ((x-E)(x-E)^T - V)) = (k+1) (P(x) - psi_k(mu))``.
    """
    mean, cov = measure_moments(mu)
    if not 1 <= k <= mu.dim:
        raise DomainError(f"k={k} outside 1..{mu.dim}")
    g = grad_psi(cov, k)
    value = psi_spectral(cov.spectrum, k)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    y = pts - mean
    f = np.einsum("ni,ij,nj->n", y, g, y) - float(np.sum(g * cov.entries))
    p = value + f / (k + 1)
    return float(p[0]) if np.ndim(x) == 1 else p


# -- solver -----------------------------------------------------------------

class _MaxDivProblem:
    def __init__(self, x, k):
        self.x = x
        self.k = k
        self.target = float(k)

    def _moments(self, w):
        nz = w > 0
        mean, cov = weighted_moments(self.x[nz], w[nz])
        return mean, CovMatrix(cov)

    def objective(self, w):
        _, cov = self._moments(w)
        value = psi_spectral(cov.spectrum, self.k)
        return max(value, 0.0) ** (1.0 / self.k)

    def scores(self, w, idx=None):
        mean, cov = self._moments(w)
        value = psi_spectral(cov.spectrum, self.k)
        if not value > 0:
            raise DegenerateMeasureError("psi vanished along the search direction")
        g = grad_psi(cov, self.k)
        y = (self.x if idx is None else self.x[idx]) - mean
        return np.einsum("ni,ij,nj->n", y, g, y) / value


def greedy_simplex_subset(x, tol=1e-12):
    """Indices of up to ``d+1`` affinely independent candidates.

    Starts from the candidate farthest from the centroid, then repeatedly
    adds the candidate farthest from the affine hull of those chosen, which
    greedily maximises the successive simplex volume.
    """
    m, d = x.shape
    c = x.mean(axis=0)
    first = int(np.argmax(np.sum((x - c) ** 2, axis=1)))
    chosen = [first]
    resid = x - x[first]
    scale = max(float(np.max(np.abs(resid))), 1e-300)
    while len(chosen) < d + 1:
        norms = np.sqrt(np.sum(resid ** 2, axis=1))
        j = int(np.argmax(norms))
        if norms[j] <= tol * scale:
            break
        chosen.append(j)
        q = resid[j] / norms[j]
        resid = resid - np.outer(resid @ q, q)
    return chosen


def _to_measure(x, w):
    # duplicated candidates share one support point
    acc = {}
    for i in np.flatnonzero(w > 0):
        key = tuple(x[i])
        acc[key] = acc.get(key, 0.0) + w[i]
    pts = np.array(list(acc.keys()))
    wts = np.array(list(acc.values()))
    return DiscreteMeasure(pts, wts / wts.sum())


def solve_max_div(candidates, k: int, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                  init_weights=None, mult_every: int = 20):
    """Maximise ``psi_k`` over measures supported on ``candidates``.

    Returns ``(measure, report)``.  ``report.converged`` is False when
    ``max_iter`` ran out first; ``report.gap`` then holds the last gap.
    ``report.history`` is the nondecreasing trace of ``psi_k^{1/k}``.
    """
    x = _candidates(candidates)
    m, d = x.shape
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    chosen = greedy_simplex_subset(x)
    if len(chosen) < k + 1:
        raise DegenerateInputError(
            f"candidates span an affine space of dimension {len(chosen) - 1} < k={k}")
    if init_weights is None:
        w0 = np.zeros(m)
        w0[chosen] = 1.0 / len(chosen)
    else:
        w0 = np.asarray(init_weights, dtype=float)
        if w0.shape != (m,) or np.any(w0 < 0) or not w0.sum() > 0:
            raise DomainError("init_weights must be a nonnegative vector over the candidates")
        w0 = w0 / w0.sum()
    problem = _MaxDivProblem(x, k)
    if not problem.objective(w0) > 0:
        raise DegenerateInputError("initial weights give psi_k = 0")
    res = _simplex.maximize_on_simplex(problem, w0, tol=tol, max_iter=max_iter, mult_every=mult_every)
    mu = _to_measure(x, res.weights)
    cert = optimality_gap(mu, x, k)
    report = CertificateReport(k=k, gap=cert.gap, worst_point=cert.worst_point,
                               support_equality_residual=cert.support_equality_residual,
                               converged=cert.gap <= tol, iterations=res.iterations,
                               history=tuple(res.history))
    return mu, report


# -- duality ----------------------------------------------------------------

class _PolarProblem:
    # maximise E_k(u / m)^{1/k} over the simplex; v = u / m is diagonal in M's eigenbasis
    def __init__(self, m, k):
        self.m = m
        self.k = k
        self.target = float(k)

    def objective(self, u):
        return max(esf_all(u / self.m)[self.k], 0.0) ** (1.0 / self.k)

    def scores(self, u, idx=None):
        v = u / self.m
        ek = esf_all(v)[self.k]
        if not ek > 0:
            raise DegenerateMeasureError("E_k vanished")
        rng = range(v.size) if idx is None else idx
        return np.array([esf_all(np.delete(v, i))[self.k - 1] / (self.m[i] * ek) for i in rng])


def polar_function(M, k: int, tol: float = 1e-11) -> float:
    """``inf { Psi_k(V)^{-1/k} : V >= 0, tr(M V) = 1 }`` evaluated numerically.

    The infimum is attained at some ``V`` commuting with ``M`` (averaging
    over sign flips in the eigenbasis of ``M`` keeps ``tr(MV)`` and, by
    concavity and orthogonal invariance, cannot lower ``Psi_k^{1/k}``), so
    only the eigenvalues of ``V`` need optimising.  Returns 0 for singular
    ``M``, where ``Psi_k`` is unbounded on the constraint set.
    """
    mm = as_cov(M)
    d = mm.dim
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    m = mm.spectrum
    if mm.is_singular():
        return 0.0
    problem = _PolarProblem(m, k)
    u0 = np.full(d, 1.0 / d)
    res = _simplex.maximize_on_simplex(problem, u0, tol=tol, max_iter=10_000, record=False)
    v = res.weights / m
    return float(psi_spectral(v, k) ** (-1.0 / k))


def polar_function_closed_form(M, k: int) -> float:
    """Closed forms: ``lambda_min(M)/2`` for ``k=1``; for ``k=2`` when ``I >= (d-1) M / tr M``."""
    mm = as_cov(M)
    d = mm.dim
    a = mm.entries
    if k == 1:
        return float(mm.spectrum[-1]) / 2.0
    if k == 2:
        if d < 2:
            raise DomainError("k=2 needs d >= 2")
        t = float(np.trace(a))
        if mm.spectrum[0] * (d - 1) > t * (1 + 1e-12):
            raise DomainError("closed form needs I >= (d-1) M / tr(M)")
        denom = t * t / (d - 1) - float(np.sum(a * a))
        v = (np.eye(d) * t / (d - 1) - a) / denom
        return float(psi(CovMatrix(v), 2).value ** -0.5)
    raise DomainError("closed-form polar function only for k = 1, 2")


def dual_certificate(mu: DiscreteMeasure, candidates, k: int) -> DualCertificate:
    """Ellipsoid ``M = grad Psi_k[V] / (k Psi_k(V))`` centred at ``E_mu``."""
    x = _candidates(candidates)
    mean, cov, value = _state(mu, k)
    m = grad_psi(cov, k) / (k * value)
    m = 0.5 * (m + m.T)
    trace_resid = abs(float(np.sum(m * cov.entries)) - 1.0)
    y = x - mean
    slack = float(np.max(np.einsum("ni,ij,nj->n", y, m, y)) - 1.0)
    polar = polar_function(m, k)
    return DualCertificate(M=m, center=mean, trace_residual=trace_resid,
                           containment_slack=slack, polar_value=polar,
                           dual_product=value ** (1.0 / k) * polar)


def complement_condition(mu: DiscreteMeasure, candidates, k: int) -> CertificateReport:
    """Certificate built from ``V^{-1}`` and ``Psi_{d-k}`` only.

    Score ``(x-E)^T [V^{-1} - V^{-1} grad Psi_{d-k}[V^{-1}] V^{-1} / Psi_{d-k}(V^{-1})] (x-E)``;
    its mu-average is ``d - (d-k) = k``, so the bound is ``k`` as for the
    direct score.  Needs a nonsingular ``V``.
    """
    x = _candidates(candidates)
    mean, cov = measure_moments(mu)
    d = mu.dim
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")
    if cov.is_singular():
        raise SingularMatrixError("complement condition needs a nonsingular covariance")
    vinv = cov.inverse()
    vi = CovMatrix(0.5 * (vinv + vinv.T))
    j = d - k
    g = grad_psi(vi, j)
    a = vinv - vinv @ (g / psi_spectral(vi.spectrum, j)) @ vinv
    a = 0.5 * (a + a.T)

    def score(pts):
        y = pts - mean
        return np.einsum("ni,ij,nj->n", y, a, y)

    s = score(x)
    jmax = int(np.argmax(s))
    resid = float(np.max(np.abs(score(mu.support) - k)))
    return CertificateReport(k=k, gap=float(s[jmax] - k), worst_point=jmax,
                             support_equality_residual=resid)


def measure_to_dict(mu: DiscreteMeasure, k: int, report: Optional[CertificateReport] = None):
    _, cov = measure_moments(mu)
    out = {
        "support": mu.support.tolist(),
        "weights": mu.weights.tolist(),
        "psi": {str(k): psi(cov, k).value},
    }
    if report is not None:
        out["certificate"] = report.to_dict()
    return out


def measure_from_dict(data):
    """Inverse of :func:`measure_to_dict`; re-validates the measure and psi values."""
    mu = DiscreteMeasure(data["support"], data["weights"])
    _, cov = measure_moments(mu)
    for k, value in data.get("psi", {}).items():
        expected = psi(cov, int(k)).value
        if abs(float(value) - expected) > 1e-9 * max(abs(expected), 1e-300):
            raise DomainError(f"stored psi_{k} disagrees with the measure")
    cert = data.get("certificate")
    return mu, (CertificateReport.from_dict(cert) if cert is not None else None)
