"""Certificate-driven ascent of a concave function over the probability simplex.

Both optimisation problems in this package have the same shape: maximise a
concave, permutation-free function of a weight vector ``w`` whose partial
derivatives (up to a positive factor and a common shift) are per-candidate
*scores* with ``w . scores == target``.  The optimality certificate is
``max(scores) - target <= tol``.

Steps:

* vertex direction toward the best-scoring candidate (Frank-Wolfe),
* pairwise direction moving mass from the worst-scoring support point to
  the best-scoring candidate (or, with ``pairwise=False``, a classical away
  direction), with drop steps,
* every ``mult_every`` iterations a multiplicative reweighting
  ``w_i * score_i / target`` used as a search direction,
* optional averaging of each iterate with a symmetry permutation.

Step lengths solve ``phi'(alpha) = 0`` along the segment.  The directional
derivative is ``sum_j d_j score_j`` because every direction sums to zero, so
the common shift drops out.  Value comparisons would stall near the optimum,
where objective changes fall below double precision long before the
certificate does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

PRUNE_BELOW = 1e-10
TIE_RTOL = 1e-12
ASCENT_SLACK = 1e-12


@dataclass
class AscentResult:
    weights: np.ndarray
    gap: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _argmax_lowest(s, mask=None):
    s = np.where(mask, s, -np.inf) if mask is not None else s
    smax = s.max()
    tol = TIE_RTOL * max(1.0, abs(smax))
    return int(np.flatnonzero(s >= smax - tol)[0])


def _argmin_lowest(s, mask):
    s = np.where(mask, s, np.inf)
    smin = s.min()
    tol = TIE_RTOL * max(1.0, abs(smin))
    return int(np.flatnonzero(s <= smin + tol)[0])


def _slope(problem, w, d, idx, alpha):
    try:
        s = problem.scores(w + alpha * d, idx)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError):
        return -math.inf
    val = float(d[idx] @ s)
    return val if math.isfinite(val) else -math.inf


def line_search(problem, w, d, amax):
    """Step in ``[0, amax]`` maximising the concave objective along ``d``."""
    idx = np.flatnonzero(d != 0.0)
    f0 = _slope(problem, w, d, idx, 0.0)
    if not f0 > 0:
        return 0.0
    f1 = _slope(problem, w, d, idx, amax)
    if f1 >= 0:
        return amax
    if f1 == -math.inf:
        # pull the right end inside the region where the objective is finite
        hi = amax
        while True:
            hi *= 0.5
            fh = _slope(problem, w, d, idx, hi)
            if fh != -math.inf or hi < 1e-300:
                break
        if fh >= 0:
            lo, hi = hi, amax
            while hi - lo > 1e-15 * amax:
                mid = 0.5 * (lo + hi)
                fm = _slope(problem, w, d, idx, mid)
                if fm >= 0:
                    lo = mid
                else:
                    hi = mid
            return lo
        amax = hi
    return brentq(lambda a: _slope(problem, w, d, idx, a), 0.0, amax,
                  xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)


def maximize_on_simplex(problem, w0, *, tol, max_iter, mult_every=20,
                        symmetry=None, record=True, pairwise=True):
    """Run the ascent until ``max(scores) - target <= tol``.

    ``problem`` supplies ``objective(w)`` (the concave criterion),
    ``scores(w, idx=None)`` and ``target``.
    """
    w = np.array(w0, dtype=float)
    target = problem.target
    obj = problem.objective(w)
    history = [obj] if record else []
    gap = math.inf
    it = 0
    stalls = 0
    for it in range(1, max_iter + 1):
        s = problem.scores(w)
        gap = float(s.max() - target)
        if gap <= tol:
            return AscentResult(_prune(w), gap, it - 1, True, history)
        on = w > 0
        j = _argmax_lowest(s)
        a = _argmin_lowest(s, on)
        toward = s[j] - target
        away = target - s[a]

        if mult_every and it % mult_every == 0 and np.all(s[on] >= 0):
            d = w * s / target - w
        elif (not pairwise and toward >= away) or w[a] >= 1.0 or a == j:
            d = -w.copy()
            d[j] += 1.0
        elif pairwise:
            d = np.zeros_like(w)
            d[j] += 1.0
            d[a] -= 1.0
        else:
            d = w.copy()
            d[a] -= 1.0
        if symmetry is not None:
            d = 0.5 * (d + d[symmetry])
        neg = d < 0
        if not np.any(neg):
            break
        amax = float(np.min(w[neg] / -d[neg]))

        alpha = line_search(problem, w, d, amax)
        w_new = w + alpha * d
        if alpha == amax:
            # drop step: zero the coordinates that hit the boundary
            w_new[neg & (w <= -amax * d * (1 + 1e-12))] = 0.0
        w_new[w_new < 0] = 0.0
        w_new /= w_new.sum()
        if symmetry is not None:
            w_new = 0.5 * (w_new + w_new[symmetry])

        new_obj = problem.objective(w_new)
        if new_obj >= obj - ASCENT_SLACK * abs(obj):
            w, obj = w_new, new_obj
            stalls = 0
            if record:
                history.append(new_obj)
        else:
            stalls += 1
            if stalls > mult_every + 2:
                break
    s = problem.scores(w)
    gap = float(s.max() - target)
    return AscentResult(_prune(w), gap, it, gap <= tol, history)


def _prune(w):
    w = w.copy()
    w[w < PRUNE_BELOW] = 0.0
    return w / w.sum()
