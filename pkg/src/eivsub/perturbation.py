"""Perturbation subsampling with random weights (CLEPS).

Each record's loss term is multiplied by ``psi_i = mu_i * nu_i`` with
``mu_i ~ Bernoulli(q)`` and ``nu_i`` drawn from a known distribution with mean
``1/q`` and variance ``b2``.  Only records with ``mu_i = 1`` enter the fit, so
a replicate costs O(q n p^2).  Averaging ``m`` independent replicates gives
``beta_check^(m)`` and a between-replicate variance estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from ._linalg import Factorization, cross, gram, solve_checked, symmetrize
from .core import CoefficientEstimate, Dataset, ErrorCovariance, _check_beta_sigma
from .errors import DimensionError, ParameterError, SingularSystemError, VarianceUnavailableError
from .rng import SeedKey, make_rng

MAX_RETRIES = 3


@dataclass(frozen=True)
class WeightDistribution:
    """Law of the positive weight ``nu``; must have mean ``1/q``.

    ``sample(rng, size, q)`` draws the weights and ``variance(q)`` returns ``b2``.
    """

    name: str
    sample: Callable[[np.random.Generator, int, float], np.ndarray]
    variance: Callable[[float], float]


EXPONENTIAL = WeightDistribution(
    "exponential",
    lambda rng, size, q: rng.exponential(1.0 / q, size=size),
    lambda q: 1.0 / q**2,
)

# nu fixed at 1/q: plain Bernoulli (Poisson) subsampling.
DEGENERATE = WeightDistribution(
    "degenerate",
    lambda rng, size, q: np.full(size, 1.0 / q),
    lambda q: 0.0,
)

WEIGHT_DISTRIBUTIONS = {d.name: d for d in (EXPONENTIAL, DEGENERATE)}


@dataclass(frozen=True)
class PerturbationWeights:
    psi: np.ndarray
    q: float
    b2: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ParameterError(f"inclusion rate q must lie in (0, 1], got {self.q}")
        psi = np.array(self.psi, dtype=np.float64)
        if psi.ndim != 1 or (psi.size and psi.min() < 0):
            raise ParameterError("psi must be a non-negative vector")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def a(self) -> float:
        """Variance-inflation constant ``1 - q + b2 q^2``."""
        return 1.0 - self.q + self.b2 * self.q**2

    @cached_property
    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.psi)


def _resolve(dist) -> WeightDistribution:
    if isinstance(dist, WeightDistribution):
        return dist
    try:
        return WEIGHT_DISTRIBUTIONS[dist]
    except KeyError:
        raise ParameterError(f"unknown weight distribution {dist!r}") from None


def generate_weights(n: int, q: float, seed: SeedKey, dist="exponential") -> PerturbationWeights:
    """Draw ``psi = mu * nu`` for ``n`` records.

    ``nu`` is only sampled where the Bernoulli gate is open; the joint law of
    ``psi`` is unchanged by skipping the others.
    """
    if not 0.0 < q <= 1.0:
        raise ParameterError(f"inclusion rate q must lie in (0, 1], got {q}")
    dist = _resolve(dist)
    rng = make_rng(seed)
    idx = np.flatnonzero(rng.random(n) < q)
    psi = np.zeros(n)
    psi[idx] = dist.sample(rng, idx.size, q)
    return PerturbationWeights(psi, float(q), float(dist.variance(q)))


def _perturbed_system(data: Dataset, sigma: ErrorCovariance, weights: PerturbationWeights):
    if weights.psi.shape[0] != data.n:
        raise DimensionError(f"{weights.psi.shape[0]} weights for {data.n} records")
    if sigma.p != data.p:
        raise DimensionError(f"sigma_uu is {sigma.p}x{sigma.p} but data has p={data.p}")
    idx = weights.nonzero
    if idx.size == 0:
        raise SingularSystemError("perturbed corrected Gram", 0.0, "no record has psi > 0")
    wts = weights.psi[idx] / data.n
    w = data.w[idx]
    return gram(w, wts) - sigma.sigma_uu, cross(w, data.y[idx], wts)


def perturbed_estimate(
    data: Dataset, sigma: ErrorCovariance, weights: PerturbationWeights, *, ridge: bool = False
) -> CoefficientEstimate:
    h, b = _perturbed_system(data, sigma, weights)
    beta, rcond = solve_checked(
        h, b, "perturbed corrected Gram", ridge=ridge, hint=f"{weights.nonzero.size} records with psi > 0"
    )
    return CoefficientEstimate(beta, "CLEPS-1", rcond)


def perturbed_score(beta, data: Dataset, sigma: ErrorCovariance, psi) -> np.ndarray:
    """Gradient of the perturbed corrected loss at ``beta``."""
    beta = _check_beta_sigma(beta, data.p, sigma)
    resid = data.y - data.w @ beta
    return -(data.w.T @ (np.asarray(psi) * resid)) / data.n - sigma.sigma_uu @ beta


@dataclass(frozen=True)
class ClepsResult:
    beta_mean: np.ndarray
    per_rep: np.ndarray
    cov: Optional[np.ndarray]
    m: int
    r: int
    q: float
    nonzero_counts: np.ndarray
    retries: int = 0

    def require_cov(self) -> np.ndarray:
        if self.cov is None:
            raise VarianceUnavailableError("between-replicate variance needs m >= 2")
        return self.cov


def replicate_estimate(
    data: Dataset, sigma: ErrorCovariance, q: float, seed: SeedKey, k: int, dist="exponential"
):
    """The ``k``-th perturbed fit, redrawn on a singular Gram at most 3 times.

    Returns ``(beta, nonzero_count, retries)``.
    """
    for attempt in range(MAX_RETRIES + 1):
        weights = generate_weights(data.n, q, (seed, "rep", k, attempt), dist)
        try:
            est = perturbed_estimate(data, sigma, weights)
        except SingularSystemError:
            if attempt == MAX_RETRIES:
                raise
            continue
        return est.beta, weights.nonzero.size, attempt
    raise AssertionError("unreachable")


def between_replicate_cov(per_rep: np.ndarray) -> np.ndarray:
    """``sum_k (b_k - bbar)(b_k - bbar)' / (m (m-1))``."""
    m = per_rep.shape[0]
    if m < 2:
        raise VarianceUnavailableError("between-replicate variance needs m >= 2")
    dev = per_rep - per_rep.mean(axis=0)
    return symmetrize(dev.T @ dev) / (m * (m - 1))


def cleps_estimate(
    data: Dataset,
    sigma: ErrorCovariance,
    r: int,
    m: int,
    seed: SeedKey,
    *,
    dist="exponential",
    covariance: Optional[bool] = None,
) -> ClepsResult:
    """Average ``m`` perturbed fits at inclusion rate ``q = r / n``.

    ``covariance=None`` computes the between-replicate variance when
    ``m >= 2``; ``covariance=True`` with ``m == 1`` raises.
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    if not 1 <= r <= data.n:
        raise ParameterError(f"r must lie in [1, n={data.n}], got {r}")
    if covariance and m == 1:
        raise VarianceUnavailableError("between-replicate variance needs m >= 2")
    if m > 1 and m >= r / 10:
        warnings.warn(f"m={m} is not below r/10={r / 10:g}; averaging gains will be small", stacklevel=2)
    q = r / data.n
    betas, counts, retries = [], [], 0
    for k in range(m):
        beta, count, tries = replicate_estimate(data, sigma, q, seed, k, dist)
        betas.append(beta)
        counts.append(count)
        retries += tries
    per_rep = np.vstack(betas)
    cov = between_replicate_cov(per_rep) if (m >= 2 and covariance is not False) else None
    return ClepsResult(
        beta_mean=per_rep.mean(axis=0),
        per_rep=per_rep,
        cov=cov,
        m=m,
        r=r,
        q=q,
        nonzero_counts=np.array(counts),
        retries=retries,
    )


def asymptotic_covariance(data: Dataset, beta_hat, sigma: ErrorCovariance, a: float, m: int, r: int) -> np.ndarray:
    """Large-sample conditional covariance of ``beta_check^(m)`` when ``m r < n``.

    ``(a / (m r)) H_W^{-1} Sigma_c H_W^{-1}`` with
    ``Sigma_c = (1/n) sum W_i W_i' e_i^2``.
    """
    beta = _check_beta_sigma(beta_hat, data.p, sigma)
    resid = data.y - data.w @ beta
    sc = gram(data.w, resid**2) / data.n
    fac = Factorization(gram(data.w) / data.n - sigma.sigma_uu, "H_W = (1/n) sum W W' - Sigma_uu")
    return symmetrize(fac.solve(fac.solve(sc).T).T) * a / (m * r)
