"""Seeded Monte-Carlo harness for the unbiased estimator of ``psi_k``.

Every replicate draws from its own counter-based stream: a Philox generator
keyed by ``SeedSequence([seed, replicate])``.  Draws within a replicate are
consumed in a fixed order (the whole ``(n, d)`` block at once), so results
depend only on ``(seed, replicate)`` and never on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .errors import DegenerateMeasureError, DomainError, GvarError, InsufficientSampleError
from .estimate import (DiagonalNormalOmega, DiscreteOmega, IidCoordinatesOmega, MonteCarloOmega,
                       NormalOmega, OmegaSpec, Sample, empirical_moments, scale_factor)
from .io import read_matrix_csv
from .measure import DiscreteMeasure, measure_moments
from .symfun import CovMatrix, as_cov, psi

KINDS = ("uniformCube", "normal", "uniformSphere", "discrete")
CUBE_VARIANCE = 1.0 / 12.0
CUBE_FOURTH_MOMENT = 9.0 / 5.0


@dataclass(frozen=True)
class GeneratorSpec:
    """Sampling distribution plus seed.

    Use the constructors :meth:`uniform_cube`, :meth:`normal`,
    :meth:`uniform_sphere` and :meth:`discrete` rather than the raw fields.
    """

    kind: str
    dim: int
    seed: int = 0
    mean: Optional[tuple] = None
    cov: Optional[CovMatrix] = field(default=None, compare=False)
    radius: float = 1.0
    measure: Optional[DiscreteMeasure] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown generator kind {self.kind!r}")
        if isinstance(self.dim, bool) or int(self.dim) != self.dim or self.dim < 1:
            raise DomainError("dimension must be a positive integer")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @classmethod
    def uniform_cube(cls, d: int, seed: int = 0):
        """Uniform on ``[0, 1]^d``."""
        return cls("uniformCube", d, seed)

    @classmethod
    def normal(cls, mean, cov, seed: int = 0):
        v = as_cov(cov)
        m = np.asarray(mean, dtype=float).ravel()
        if m.size != v.dim or not np.all(np.isfinite(m)):
            raise DomainError("mean must be a finite vector matching the covariance")
        return cls("normal", v.dim, seed, mean=tuple(m.tolist()), cov=v)

    @classmethod
    def uniform_sphere(cls, d: int, radius: float = 1.0, seed: int = 0):
        """Uniform on the sphere of radius ``radius`` centred at the origin."""
        if not radius > 0 or not math.isfinite(radius):
            raise DomainError("radius must be positive")
        return cls("uniformSphere", d, seed, radius=float(radius))

    @classmethod
    def discrete(cls, mu: DiscreteMeasure, seed: int = 0):
        return cls("discrete", mu.dim, seed, measure=mu)

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return GeneratorSpec(self.kind, self.dim, seed, self.mean, self.cov, self.radius, self.measure)

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim, "seed": int(self.seed)}
        if self.kind == "normal":
            out["mean"] = list(self.mean)
            out["cov"] = self.cov.entries.tolist()
        elif self.kind == "uniformSphere":
            out["radius"] = self.radius
        elif self.kind == "discrete":
            out["support"] = self.measure.support.tolist()
            out["weights"] = self.measure.weights.tolist()
        return out


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Philox stream keyed by ``(seed, replicate)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replicate)])))


def _draw(spec: GeneratorSpec, rng, n):
    d = spec.dim
    if spec.kind == "uniformCube":
        return rng.random((n, d))
    if spec.kind == "normal":
        lam, u = spec.cov.spectrum, spec.cov.eigenvectors
        z = rng.standard_normal((n, d))
        return np.asarray(spec.mean) + (z * np.sqrt(lam)) @ u.T
    if spec.kind == "uniformSphere":
        z = rng.standard_normal((n, d))
        return spec.radius * z / np.linalg.norm(z, axis=1, keepdims=True)
    mu = spec.measure
    idx = rng.choice(len(mu), size=n, p=mu.weights)
    return mu.support[idx]


def draw_sample(spec: GeneratorSpec, n: int, replicate: int = 0) -> Sample:
    """``n`` i.i.d. rows from ``spec``; deterministic in ``(spec.seed, replicate)``."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    return Sample(_draw(spec, replicate_rng(spec.seed, replicate), int(n)))


def generator_moments(spec: GeneratorSpec):
    """Exact mean vector and covariance of the generator."""
    d = spec.dim
    if spec.kind == "uniformCube":
        return np.full(d, 0.5), CovMatrix(CUBE_VARIANCE * np.eye(d))
    if spec.kind == "normal":
        return np.asarray(spec.mean), spec.cov
    if spec.kind == "uniformSphere":
        return np.zeros(d), CovMatrix(spec.radius ** 2 / d * np.eye(d))
    return measure_moments(spec.measure)


def theoretical_psi(spec: GeneratorSpec, k: int) -> float:
    """``psi_k(mu) = Psi_k(V_mu)`` for the generator's exact covariance."""
    return psi(generator_moments(spec)[1], k).value


def omega_spec(spec: GeneratorSpec, m: int = 20_000) -> OmegaSpec:
    """Closed-form omega where one exists; Monte Carlo for the sphere.

    On the sphere ``h`` is constant (the covariance is isotropic and
    ``|x - mean|`` is fixed), so the simulated omega is zero up to rounding.
    """
    if spec.kind == "uniformCube":
        return IidCoordinatesOmega(CUBE_VARIANCE, CUBE_FOURTH_MOMENT, spec.dim)
    if spec.kind == "normal":
        a = spec.cov.entries
        if np.count_nonzero(a - np.diag(np.diag(a))) == 0:
            return DiagonalNormalOmega(tuple(np.diag(a).tolist()))
        return NormalOmega(spec.cov)
    if spec.kind == "discrete":
        return DiscreteOmega(spec.measure)
    mean, cov = generator_moments(spec)
    return MonteCarloOmega(lambda rng, size: _draw(spec, rng, size), mean, cov, m=m, seed=spec.seed)


@dataclass
class MonteCarloReport:
    k: int
    n: int
    reps: int
    psi_true: float
    ratios: np.ndarray = field(repr=False)
    summary: dict
    estimator_variance: float
    asymptotic_variance: float
    ks_distance: Optional[float]

    def to_dict(self, include_ratios: bool = True):
        out = {
            "k": self.k,
            "n": self.n,
            "reps": self.reps,
            "psiTrue": self.psi_true,
            "summary": dict(self.summary),
            "estimatorVariance": self.estimator_variance,
            "asymptoticVariance": self.asymptotic_variance,
            "ksDistance": self.ks_distance,
        }
        if include_ratios:
            out["ratios"] = self.ratios.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        rep = cls(int(data["k"]), int(data["n"]), int(data["reps"]), float(data["psiTrue"]),
                  np.asarray(data.get("ratios", []), dtype=float), dict(data["summary"]),
                  float(data["estimatorVariance"]), float(data["asymptoticVariance"]),
                  None if data["ksDistance"] is None else float(data["ksDistance"]))
        rep.validate()
        return rep

    def validate(self):
        s = self.summary
        q = [s["min"], s["q25"], s["median"], s["q75"], s["max"]]
        if any(a > b for a, b in zip(q, q[1:])):
            raise DomainError("summary quantiles are not ordered")
        if s["variance"] < 0 or self.estimator_variance < 0 or self.asymptotic_variance < 0:
            raise DomainError("negative variance in report")
        if self.ratios.size and self.ratios.size != self.reps:
            raise DomainError("ratio count does not match the number of replicates")

    def csv_rows(self):
        """Tidy rows ``(k, replicate, ratio)``."""
        return [(self.k, r, float(x)) for r, x in enumerate(self.ratios)]


def summarize(ratios) -> dict:
    """Box-plot summary with linear-interpolation (type 7) quantiles."""
    x = np.asarray(ratios, dtype=float)
    q = np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return {
        "min": float(q[0]),
        "q25": float(q[1]),
        "median": float(q[2]),
        "q75": float(q[3]),
        "max": float(q[4]),
        "mean": float(np.mean(x)),
        "variance": float(np.var(x, ddof=1)) if x.size > 1 else 0.0,
    }


def _replicate(spec, n, ks, factors, r):
    s = draw_sample(spec, n, r)
    _, cov = empirical_moments(s)
    return [factors[i] * psi(cov, k).value for i, k in enumerate(ks)]


def run_monte_carlo(spec: GeneratorSpec, n: int, ks, reps: int, workers: int = 1,
                    omega: Optional[OmegaSpec] = None) -> list:
    """``reps`` replicates of ``psi_hat_k`` for every ``k`` in ``ks``.

    Replicates may run on ``workers`` threads; each replicate's stream is
    keyed by its index, so the report is identical for any worker count.
    """
    ks = [int(k) for k in ks]
    if not ks:
        raise DomainError("need at least one k")
    for k in ks:
        if not 1 <= k <= spec.dim:
            raise DomainError(f"k={k} outside 1..{spec.dim}")
    if n < max(ks) + 2:
        raise InsufficientSampleError(f"need n >= max(k)+2 = {max(ks) + 2}, got n={n}")
    if reps < 2:
        raise DomainError("need at least 2 replicates")
    psi_true = [theoretical_psi(spec, k) for k in ks]
    for k, p in zip(ks, psi_true):
        if not p > 0:
            raise DegenerateMeasureError(f"psi_{k} of the generator is zero; ratios undefined")
    factors = [scale_factor(n, k) for k in ks]

    def job(r):
        return _replicate(spec, n, ks, factors, r)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, range(reps)))
    else:
        rows = [job(r) for r in range(reps)]
    est = np.array(rows)
    om = omega_spec(spec) if omega is None else omega

    reports = []
    for i, k in enumerate(ks):
        values = est[:, i]
        ratios = values / psi_true[i]
        asvar = (k + 1) ** 2 * om.omega(k) / n
        ks_dist = None
        # omega at rounding level (the sphere) means no normal limit at this scale
        if asvar > 1e-12 * psi_true[i] ** 2 / n:
            ks_dist = float(stats.kstest(values, "norm", args=(psi_true[i], math.sqrt(asvar))).statistic)
        reports.append(MonteCarloReport(
            k=k, n=n, reps=reps, psi_true=psi_true[i], ratios=ratios, summary=summarize(ratios),
            estimator_variance=float(np.var(values, ddof=1)), asymptotic_variance=float(asvar),
            ks_distance=ks_dist))
    return reports


def parse_generator(text: str, seed: int = 0) -> GeneratorSpec:
    """Parse ``uniform-cube:D``, ``normal:D[:VAR]``, ``uniform-sphere:D[:RHO]`` or ``discrete:FILE``.

    ``normal`` has mean zero and covariance ``VAR * I`` (default ``1/12``,
    matching the unit cube).  A discrete file is CSV with the weight in the
    first column and the coordinates after it.
    """
    kind, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if kind == "uniform-cube" and len(parts) == 1:
            return GeneratorSpec.uniform_cube(int(parts[0]), seed)
        if kind == "normal" and len(parts) in (1, 2):
            d = int(parts[0])
            var = float(parts[1]) if len(parts) == 2 else CUBE_VARIANCE
            return GeneratorSpec.normal(np.zeros(d), var * np.eye(d), seed)
        if kind == "uniform-sphere" and len(parts) in (1, 2):
            rho = float(parts[1]) if len(parts) == 2 else 1.0
            return GeneratorSpec.uniform_sphere(int(parts[0]), rho, seed)
        if kind == "discrete" and rest:
            a = read_matrix_csv(rest)
            return GeneratorSpec.discrete(DiscreteMeasure(a[:, 1:], a[:, 0]), seed)
    except ValueError as exc:
        if isinstance(exc, GvarError):
            raise
        raise DomainError(f"bad generator spec {text!r}: {exc}") from None
    raise DomainError(f"bad generator spec {text!r}")
