"""Optimal approximate designs for the criterion ``Psi_k^{-1/k}(M^{-1}(xi))``.

For a linear regression ``y = theta^T f(t) + eps`` and a design measure
``xi`` on a finite grid, ``M(xi) = sum_j w_j f(t_j) f(t_j)^T``.  The
criterion interpolates between A-optimality (``k = 1``) and D-optimality
(``k = d``).  A design is optimal iff the variance function

    phi(t) = f(t)^T M^{-1} grad Psi_k[M^{-1}] M^{-1} f(t) / Psi_k(M^{-1})

is at most ``k`` on the design space, with equality on the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import root

from . import _simplex
from .errors import DegenerateInputError, DomainError
from .symfun import CovMatrix, esf_all, grad_psi, psi_factor, psi_spectral

SUPPORT_THRESHOLD = 1e-8
DEFAULT_STEP = 2e-3
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DesignSpace:
    """Finite design space: labels ``t_j`` with regressor rows ``f(t_j)^T``.

    ``regressor_fn`` (optional) maps an array of scalar labels to regressor
    rows and enables off-grid polishing.  ``symmetry`` (optional) is an index
    permutation under which the design problem is invariant.
    """

    def __init__(self, labels, regressors, regressor_fn: Optional[Callable] = None,
                 symmetry=None, name: str = ""):
        f = np.array(regressors, dtype=float)
        if f.ndim == 1:
            f = f[:, None]
        if f.ndim != 2 or f.shape[0] == 0:
            raise DomainError("regressors must be a non-empty (m, d) array")
        if not np.all(np.isfinite(f)):
            raise DomainError("regressor rows must be finite")
        t = np.asarray(labels, dtype=float)
        if t.shape[0] != f.shape[0]:
            raise DomainError(f"{t.shape[0]} labels for {f.shape[0]} regressor rows")
        if f.shape[0] < f.shape[1]:
            raise DegenerateInputError(f"{f.shape[0]} design points cannot identify {f.shape[1]} parameters")
        self.labels = t
        self.regressors = f
        self.regressor_fn = regressor_fn
        self.symmetry = None if symmetry is None else np.asarray(symmetry, dtype=int)
        self.name = name

    @property
    def dim(self) -> int:
        return self.regressors.shape[1]

    def __len__(self):
        return self.regressors.shape[0]

    def __repr__(self):
        return f"DesignSpace({self.name or 'custom'}, m={len(self)}, d={self.dim})"


def _poly_fn(degree):
    def f(t):
        return np.vander(np.atleast_1d(np.asarray(t, dtype=float)), degree + 1, increasing=True)
    return f


def polynomial_design_space(degree: int, interval=(-1.0, 1.0), grid_step: float = DEFAULT_STEP) -> DesignSpace:
    """Polynomial regression ``f(t) = (1, t, ..., t^degree)`` on a uniform grid.

    The grid always contains both endpoints; a symmetric interval gets an
    exactly symmetric grid and the reflection as its symmetry.
    """
    if int(degree) != degree or degree < 1:
        raise DomainError("degree must be a positive integer")
    a, b = float(interval[0]), float(interval[1])
    if not (b > a) or not grid_step > 0:
        raise DomainError("need a < b and grid_step > 0")
    n = int(math.ceil((b - a) / grid_step - 1e-9))
    i = np.arange(n + 1)
    symmetric = a == -b
    if symmetric:
        t = (2 * i - n) / n * b
    else:
        t = a + (b - a) * i / n
        t[-1] = b
    fn = _poly_fn(int(degree))
    return DesignSpace(t, fn(t), regressor_fn=fn, symmetry=i[::-1] if symmetric else None,
                       name=f"poly:{int(degree)}")


class DesignMeasure:
    """Weights over the points of a :class:`DesignSpace`."""

    def __init__(self, space: DesignSpace, weights):
        w = np.array(weights, dtype=float).ravel()
        if w.shape[0] != len(space):
            raise DomainError(f"{w.shape[0]} weights for {len(space)} design points")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        self.space = space
        self.weights = w

    @classmethod
    def from_points(cls, labels, weights, regressor_fn):
        t = np.asarray(labels, dtype=float)
        space = DesignSpace(t, regressor_fn(t), regressor_fn=regressor_fn)
        return cls(space, weights)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > SUPPORT_THRESHOLD)

    def __repr__(self):
        return f"DesignMeasure(support={self.space.labels[self.support].tolist()})"


def _info(f, w):
    m = (f.T * w) @ f
    return 0.5 * (m + m.T)


def info_matrix(xi: DesignMeasure) -> CovMatrix:
    """``M(xi) = sum_j w_j f(t_j) f(t_j)^T``."""
    return CovMatrix(_info(xi.space.regressors, xi.weights))


def _matrix(xi_or_m):
    if isinstance(xi_or_m, DesignMeasure):
        return info_matrix(xi_or_m)
    return xi_or_m if isinstance(xi_or_m, CovMatrix) else CovMatrix(xi_or_m)


def log_design_criterion(xi_or_m, k: int) -> float:
    """``log det M - log Psi_{d-k}(M)``; ``-inf`` for singular ``M``.

    Differs from ``k log psi~_k`` by a constant depending on ``(d, k)`` only.
    """
    m = _matrix(xi_or_m)
    d = m.dim
    _check_k(k, d)
    if m.is_singular():
        return -math.inf
    lam = m.spectrum
    return float(np.sum(np.log(lam)) - math.log(psi_spectral(lam, d - k)))


def design_criterion(xi_or_m, k: int) -> float:
    """``psi~_k = Psi_k^{-1/k}(M^{-1}) = ((k+1)/k!)^{-1/k} det^{1/k}(M) / E_{d-k}^{1/k}(M)``.

    Returns 0 for singular ``M``.
    """
    m = _matrix(xi_or_m)
    d = m.dim
    _check_k(k, d)
    if m.is_singular():
        return 0.0
    lam = m.spectrum
    log_val = (-math.log(psi_factor(k)) + np.sum(np.log(lam)) - math.log(esf_all(lam)[d - k])) / k
    return float(math.exp(log_val))


def _check_k(k, d):
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= d:
        raise DomainError(f"k={k} outside 1..{d}")


def _rows(xi, index):
    f = xi.space.regressors
    return f if index is None else f[np.atleast_1d(index)]


def variance_function(xi: DesignMeasure, k: int, index=None):
    """``f^T M^{-1} grad Psi_k[M^{-1}] M^{-1} f / Psi_k(M^{-1})``, bounded by ``k`` at the optimum.

    Evaluated at every design point, or at ``index`` (int or array).
    """
    m = info_matrix(xi)
    _check_k(k, m.dim)
    minv = m.inverse()
    v = CovMatrix(0.5 * (minv + minv.T))
    a = minv @ grad_psi(v, k) @ minv / psi_spectral(v.spectrum, k)
    f = _rows(xi, index)
    out = np.einsum("ni,ij,nj->n", f, a, f)
    return float(out[0]) if np.isscalar(index) else out


def variance_function_complement(xi: DesignMeasure, k: int, index=None):
    """``f^T M^{-1} f - f^T grad Psi_{d-k}[M] f / Psi_{d-k}(M)``.

    Uses ``M`` itself rather than ``M^{-1}``; equals :func:`variance_function`
    pointwise, so the optimality bound is again ``k``.
    """
    m = info_matrix(xi)
    d = m.dim
    _check_k(k, d)
    minv = m.inverse()
    a = minv - grad_psi(m, d - k) / psi_spectral(m.spectrum, d - k)
    f = _rows(xi, index)
    out = np.einsum("ni,ij,nj->n", f, a, f)
    return float(out[0]) if np.isscalar(index) else out


def _spectral_variance(f, w, k):
    # phi = sum_i c_i (u_i^T f)^2 with c_i = E_{d-k}(m without m_i) / (m_i E_{d-k}(m))
    m = CovMatrix(_info(f, w) if w is not None else f)
    lam, u = m.spectrum, m.eigenvectors
    d = lam.size
    if m.is_singular():
        raise np.linalg.LinAlgError("singular information matrix")
    e = esf_all(lam)[d - k]
    c = np.array([esf_all(np.delete(lam, i))[d - k] for i in range(d)]) / (lam * e)
    return u, c


class _DesignProblem:
    def __init__(self, f, k):
        self.f = f
        self.k = k
        self.target = float(k)

    def objective(self, w):
        nz = w > 0
        m = CovMatrix(_info(self.f[nz], w[nz]))
        return design_criterion(m, self.k)

    def scores(self, w, idx=None):
        nz = w > 0
        u, c = _spectral_variance(self.f[nz], w[nz], self.k)
        z = (self.f if idx is None else self.f[idx]) @ u
        return (z * z) @ c


def _greedy_rows(f, tol=1e-12):
    # pivoted Gram-Schmidt: d linearly independent rows, largest residual first
    m, d = f.shape
    resid = f.copy()
    scale = max(float(np.max(np.abs(f))), 1e-300)
    chosen = []
    for _ in range(d):
        norms = np.sqrt(np.sum(resid ** 2, axis=1))
        j = int(np.argmax(norms))
        if norms[j] <= tol * scale:
            break
        chosen.append(j)
        q = resid[j] / norms[j]
        resid = resid - np.outer(resid @ q, q)
    return chosen


@dataclass
class DesignReport:
    k: int
    criterion: float
    gap: float
    support: list
    support_points: list
    weights: list
    polished_points: Optional[list] = None
    polished_weights: Optional[list] = None
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "k": self.k,
            "criterion": self.criterion,
            "gap": self.gap,
            "support": list(self.support),
            "supportPoints": list(self.support_points),
            "weights": list(self.weights),
            "polishedPoints": self.polished_points,
            "polishedWeights": self.polished_weights,
            "converged": self.converged,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, data):
        rep = cls(int(data["k"]), float(data["criterion"]), float(data["gap"]),
                  [int(i) for i in data["support"]], list(data["supportPoints"]),
                  [float(x) for x in data["weights"]], data.get("polishedPoints"),
                  data.get("polishedWeights"), bool(data.get("converged", True)),
                  int(data.get("iterations", 0)))
        rep.validate()
        return rep

    def validate(self):
        if self.gap < -1e-9:
            raise DomainError("reported optimum has a negative equivalence gap")
        if abs(sum(self.weights) - 1.0) > 1e-8 or any(w < 0 for w in self.weights):
            raise DomainError("report weights are not a probability vector")
        if self.polished_weights is not None and abs(sum(self.polished_weights) - 1.0) > 1e-8:
            raise DomainError("polished weights are not a probability vector")


def _golden_max(fun, lo, hi, xtol=1e-12):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    best = max([(fun(lo), lo), (fc, c), (fd, d), (fun(hi), hi)])
    return best[1]


def _reweight(f, w, k, tol, sweeps):
    # damped multiplicative updates on a fixed small support; the undamped
    # update oscillates with period two on saturated supports
    for _ in range(sweeps):
        u, c = _spectral_variance(f, w, k)
        z = f @ u
        phi = (z * z) @ c
        if np.max(np.abs(phi - k)) <= tol:
            break
        w = w * np.sqrt(phi / k)
        w = w / w.sum()
    return w


def _clusters(idx, max_gap):
    groups = [[idx[0]]]
    for i in idx[1:]:
        if i - groups[-1][-1] <= max_gap:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _local_max(phi, t0, lo, hi, width):
    # golden section on [t0 - width, t0 + width], re-centred while the maximiser sits on an inner edge
    for _ in range(100):
        a, b = max(lo, t0 - width), min(hi, t0 + width)
        t = _golden_max(phi, a, b)
        at_edge = (t - a <= 1e-9 * width and a > lo) or (b - t <= 1e-9 * width and b < hi)
        if not at_edge:
            return t
        t0 = t
    return t


def polish_design(space: DesignSpace, weights, k: int, tol: float = 1e-9,
                  sweeps: int = 10_000, rounds: int = 50, merge_cells: int = 10):
    """Move each support cluster to the local maximiser of the variance function.

    Support grid points at most ``merge_cells`` apart form one cluster, which
    starts at its weighted mean.  A few rounds of alternating moves (local
    golden-section maximisation of the variance function, then
    multiplicative reweighting) bring the points into the basin; the
    stationarity system ``phi(t_i) = k``, ``phi'(t_i) = 0`` (interior points
    only) is then solved jointly in the points and weights.  If that solve
    fails, the alternating rounds continue to a fixed point instead.  Needs
    scalar labels and ``regressor_fn``.
    """
    if space.regressor_fn is None or space.labels.ndim != 1:
        raise DomainError("polishing needs scalar labels and a regressor function")
    t_grid = space.labels
    fn = space.regressor_fn
    lo, hi = float(t_grid.min()), float(t_grid.max())
    w = np.asarray(weights, dtype=float)
    idx = np.flatnonzero(w > SUPPORT_THRESHOLD)
    groups = _clusters(list(idx), merge_cells)
    width = 2.0 * merge_cells * (hi - lo) / max(len(t_grid) - 1, 1)
    pts = np.array([np.dot(w[g], t_grid[g]) / w[g].sum() for g in groups])
    pw = np.array([w[g].sum() for g in groups])
    pw = pw / pw.sum()

    def alternate(pts, pw, n_sweeps):
        pw = _reweight(fn(pts), pw, k, tol, n_sweeps)
        u, c = _spectral_variance(fn(pts), pw, k)

        def phi(t):
            z = fn(np.array([t]))[0] @ u
            return float((z * z) @ c)

        new = np.array([_local_max(phi, t, lo, hi, width) for t in pts])
        return new, pw, float(np.max(np.abs(new - pts)))

    for _ in range(5):
        pts, pw, moved = alternate(pts, pw, 200)
    pts, pw = _merge_close(pts, pw, 1e-9 * (hi - lo))
    for _ in range(len(pts)):
        solved = _stationary_solve(fn, pts, pw, k, lo, hi)
        if solved is None:
            break
        merged = _merge_close(*solved, 1e-7 * (hi - lo))
        if len(merged[0]) == len(solved[0]):
            return solved
        pts, pw = merged
    for _ in range(rounds):
        pts, pw, moved = alternate(pts, pw, sweeps)
        if moved <= 1e-13:
            break
    pts, pw = _merge_close(pts, pw, 1e-9 * (hi - lo))
    return pts, _reweight(fn(pts), pw, k, tol, sweeps)


def _stationary_solve(fn, pts, pw, k, lo, hi):
    n = len(pts)
    span = hi - lo
    interior = np.flatnonzero((pts - lo > 1e-9 * span) & (hi - pts > 1e-9 * span))
    h = 1e-6 * span

    def unpack(x):
        t = pts.copy()
        t[interior] = x[:interior.size]
        wt = np.empty(n)
        wt[:-1] = x[interior.size:]
        wt[-1] = 1.0 - wt[:-1].sum()
        return t, wt

    def equations(x):
        t, wt = unpack(x)
        if np.any(wt <= 0):
            return np.full(x.size, 1e6)
        try:
            u, c = _spectral_variance(fn(t), wt, k)
        except np.linalg.LinAlgError:
            return np.full(x.size, 1e6)

        def phi(tt):
            z = fn(tt) @ u
            return (z * z) @ c

        ti = t[interior]
        dphi = (phi(ti + h) - phi(ti - h)) / (2 * h)
        return np.concatenate([dphi, phi(t[:-1]) - k])

    x0 = np.concatenate([pts[interior], pw[:-1]])
    try:
        sol = root(equations, x0, method="hybr", options={"xtol": 1e-14})
    except (ValueError, np.linalg.LinAlgError):
        return None
    t, wt = unpack(sol.x)
    # judged by the residual: hybr reports failure when it cannot beat xtol even at a solution
    if (np.any(wt <= 0) or np.any(t < lo) or np.any(t > hi)
            or not np.max(np.abs(sol.fun)) <= 1e-8):
        return None
    return t, wt


def _merge_close(pts, pw, eps):
    order = np.argsort(pts)
    out_t, out_w = [], []
    for i in order:
        if out_t and pts[i] - out_t[-1] <= eps:
            out_w[-1] += pw[i]
        else:
            out_t.append(pts[i])
            out_w.append(pw[i])
    return np.array(out_t), np.array(out_w) / np.sum(out_w)


GRID_STAGES = (1e-3, 1e-5)


def _polished_gap(f_grid, pts, pw, k, fn):
    # certificate over the grid and the refined points under the polished design
    fp = fn(pts)
    u, c = _spectral_variance(fp, pw, k)
    z = np.vstack([f_grid, fp]) @ u
    return float(np.max((z * z) @ c) - k)


def solve_design(space: DesignSpace, k: int, tol: float = 1e-9, max_iter: int = 1_000_000,
                 polish: bool = True, symmetrize: Optional[bool] = None, mult_every: int = 20):
    """psi~_k-optimal design on ``space``.

    Returns ``(xi, report)``.  Without polishing ``xi`` lives on ``space``
    and ``report.gap`` is ``max phi - k`` over the grid.  With polishing
    (scalar labels and a regressor function required) the grid ascent only
    has to locate the support clusters: it runs to ``1e-3``, ``1e-5`` and
    finally ``tol``, polishing after each stage and stopping as soon as the
    polished design certifies ``max phi - k <= tol`` over the grid and its
    own points.  ``xi`` then lives on the refined support points.
    """
    f = space.regressors
    d = space.dim
    _check_k(k, d)
    chosen = _greedy_rows(f)
    if len(chosen) < d:
        raise DegenerateInputError(f"regressors have rank {len(chosen)} < d={d}")
    w = np.zeros(len(space))
    w[chosen] = 1.0 / d
    sym = space.symmetry if (symmetrize or symmetrize is None) else None
    if sym is not None:
        w = 0.5 * (w + w[sym])
    problem = _DesignProblem(f, k)
    can_polish = polish and space.regressor_fn is not None and space.labels.ndim == 1
    stages = [t for t in GRID_STAGES if t > tol] + [tol] if can_polish else [tol]
    iterations, history = 0, []
    polished = None
    for stage_tol in stages:
        res = _simplex.maximize_on_simplex(problem, w, tol=stage_tol, max_iter=max_iter - iterations,
                                           mult_every=mult_every, symmetry=sym)
        w = res.weights
        iterations += res.iterations
        history.extend(res.history)
        if not can_polish:
            break
        try:
            pts, pw = polish_design(space, w, k, tol=tol)
            gap = _polished_gap(f, pts, pw, k, space.regressor_fn)
        except (np.linalg.LinAlgError, DomainError):
            continue
        polished = (pts, pw, gap)
        if gap <= tol or iterations >= max_iter:
            break

    xi = DesignMeasure(space, w)
    supp = list(xi.support)
    grid_gap = float(np.max(problem.scores(w)) - k)
    report = DesignReport(k=k, criterion=design_criterion(xi, k), gap=grid_gap, support=supp,
                          support_points=space.labels[supp].tolist(), weights=w[supp].tolist(),
                          converged=grid_gap <= tol, iterations=iterations, history=history)
    if polished is None:
        return xi, report
    pts, pw, gap = polished
    xi_p = DesignMeasure.from_points(pts, pw, space.regressor_fn)
    report.criterion = design_criterion(xi_p, k)
    report.gap = gap
    report.polished_points = pts.tolist()
    report.polished_weights = pw.tolist()
    report.converged = gap <= tol
    return xi_p, report


def efficiency(xi: DesignMeasure, xi_star: DesignMeasure, k: int) -> float:
    """``psi~_k(xi) / psi~_k(xi_star)``; 0 when ``M(xi)`` is singular."""
    ref = design_criterion(xi_star, k)
    if not ref > 0:
        raise DegenerateInputError("reference design has a singular information matrix")
    return design_criterion(xi, k) / ref


def efficiency_table(space: DesignSpace, ks=None, **opts):
    """Solve for each ``k`` and cross-evaluate: ``table[j][i] = Eff_{ks[i]}(xi*_{ks[j]})``."""
    ks = list(range(1, space.dim + 1)) if ks is None else list(ks)
    designs, reports = {}, {}
    for k in ks:
        designs[k], reports[k] = solve_design(space, k, **opts)
    table = [[efficiency(designs[j], designs[k], k) for k in ks] for j in ks]
    return {"ks": ks, "designs": designs, "reports": reports, "table": table}
