"""Inverse-probability-weighted corrected estimation on subsamples.

A subsample of ``r`` draws taken with replacement under probabilities ``pi``
gives the estimator

    beta_tilde = [(1/n) sum_d W_d W_d' / (r pi_d) - S]^{-1} (1/n) sum_d W_d y_d / (r pi_d),

which is the closed-form minimizer of the weighted corrected loss.  The
two-step driver pools a uniform pilot draw with a draw from an optimal plan,
each record weighted by the probability it was actually drawn under.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from ._linalg import Factorization, clip_psd, cross, gram, solve_checked, symmetrize
from .core import CoefficientEstimate, Dataset, ErrorCovariance, _check_beta_sigma
from .errors import DegeneratePlanError, DimensionError, ParameterError, PilotFailureError, SingularSystemError
from .rng import SeedKey, make_rng
from .sampling import SamplingPlan, optimal_probs_mv, optimal_probs_mvc, uniform_probs

Criterion = Literal["mV", "mVc"]


@dataclass(frozen=True)
class WeightedSubsample:
    """Drawn record indices and the probability each was drawn with."""

    indices: np.ndarray
    probs_at_draw: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        pr = np.array(self.probs_at_draw, dtype=np.float64)
        if idx.ndim != 1 or idx.shape != pr.shape:
            raise DimensionError("indices and probs_at_draw must be equal-length vectors")
        if idx.size and (idx.min() < 0):
            raise ParameterError("negative record index")
        if not np.all(pr > 0):
            raise ParameterError("every drawn record must have positive probability")
        idx.setflags(write=False)
        pr.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "probs_at_draw", pr)

    @property
    def r(self) -> int:
        return self.indices.shape[0]

    def weights(self) -> np.ndarray:
        """Inverse-probability weights ``1 / (r pi*)``."""
        return 1.0 / (self.r * self.probs_at_draw)

    def __add__(self, other: "WeightedSubsample") -> "WeightedSubsample":
        return WeightedSubsample(
            np.concatenate([self.indices, other.indices]),
            np.concatenate([self.probs_at_draw, other.probs_at_draw]),
        )


def draw_with_replacement(plan: SamplingPlan, r: int, seed: SeedKey) -> WeightedSubsample:
    if plan.kind != "probabilistic":
        raise ParameterError("cannot draw at random from a deterministic plan")
    if r < 0:
        raise ParameterError(f"draw count must be >= 0, got {r}")
    rng = make_rng(seed)
    idx = rng.choice(plan.n, size=r, p=plan.probs)
    return WeightedSubsample(idx, plan.probs[idx])


def _weighted_system(sub: WeightedSubsample, data: Dataset, sigma: ErrorCovariance):
    if sub.r == 0:
        raise ParameterError("empty subsample")
    if sub.indices.max() >= data.n:
        raise ParameterError("subsample index out of range")
    if sigma.p != data.p:
        raise DimensionError(f"sigma_uu is {sigma.p}x{sigma.p} but data has p={data.p}")
    wts = sub.weights() / data.n
    w = data.w[sub.indices]
    h = gram(w, wts) - sigma.sigma_uu
    return h, cross(w, data.y[sub.indices], wts)


def weighted_corrected_estimate(
    sub: WeightedSubsample,
    data: Dataset,
    sigma: ErrorCovariance,
    *,
    method: str = "IPW",
    ridge: bool = False,
) -> CoefficientEstimate:
    h, b = _weighted_system(sub, data, sigma)
    beta, rcond = solve_checked(
        h, b, "weighted corrected Gram", ridge=ridge, hint=f"subsample of r={sub.r} draws"
    )
    return CoefficientEstimate(beta, method, rcond)


def weighted_score(beta, sub: WeightedSubsample, data: Dataset, sigma: ErrorCovariance) -> np.ndarray:
    """Gradient of the weighted corrected loss at ``beta``."""
    beta = _check_beta_sigma(beta, data.p, sigma)
    wts = sub.weights() / data.n
    w = data.w[sub.indices]
    resid = data.y[sub.indices] - w @ beta
    return -(w.T @ (wts * resid)) - sigma.sigma_uu @ beta


def weighted_hessian(sub: WeightedSubsample, data: Dataset, sigma: ErrorCovariance) -> np.ndarray:
    return _weighted_system(sub, data, sigma)[0]


def conditional_variance(data: Dataset, beta_hat, sigma: ErrorCovariance, probs, r: int):
    """Conditional covariance ``V = H^{-1} V_c H^{-1}`` of the one-step estimator.

    Returns ``(V, V_c)`` for a plan ``probs`` and ``r`` draws, evaluated at the
    full-data estimate ``beta_hat``.
    """
    beta = _check_beta_sigma(beta_hat, data.p, sigma)
    probs = np.asarray(probs, dtype=np.float64)
    resid = data.y - data.w @ beta
    with np.errstate(divide="ignore", invalid="ignore"):
        wt = np.where(resid != 0, resid**2 / probs, 0.0)
    sb = sigma.sigma_uu @ beta
    vc = gram(data.w, wt) / (r * data.n**2) - np.outer(sb, sb) / r
    fac = Factorization(
        gram(data.w) / data.n - sigma.sigma_uu, "H_W = (1/n) sum W W' - Sigma_uu"
    )
    v = fac.solve(fac.solve(vc).T).T
    return symmetrize(v), symmetrize(vc)


def _plugin_parts(w, y, pi_star, beta, sigma_uu, n):
    """``(H, V_c)`` moment estimates from drawn rows; no normalization of pi."""
    total = w.shape[0]
    h = gram(w, 1.0 / pi_star) / (n * total) - sigma_uu
    resid = y - w @ beta
    vc = gram(w, resid**2 / pi_star**2) / (total**2 * n**2)
    sb = sigma_uu @ beta
    vc = vc - np.outer(sb, sb) / total
    return h, vc


def plugin_covariance(
    pooled: WeightedSubsample,
    beta,
    data: Dataset,
    sigma: ErrorCovariance,
    *,
    return_clipped: bool = False,
):
    """Subsample plug-in covariance of a pooled weighted estimate.

    The matrix is projected onto the PSD cone when the subtracted
    ``(S beta)(S beta)'`` term makes it indefinite; with ``return_clipped``
    the function also reports whether that happened.
    """
    beta = _check_beta_sigma(beta, data.p, sigma)
    if pooled.r == 0:
        raise ParameterError("empty subsample")
    h, vc = _plugin_parts(
        data.w[pooled.indices],
        data.y[pooled.indices],
        pooled.probs_at_draw,
        beta,
        sigma.sigma_uu,
        data.n,
    )
    fac = Factorization(h, "subsample H_W")
    cov, clipped = clip_psd(fac.solve(fac.solve(vc).T).T)
    return (cov, clipped) if return_clipped else cov


@dataclass(frozen=True)
class TwoStepResult:
    beta: np.ndarray
    pilot_beta: np.ndarray
    plan: SamplingPlan
    cov: np.ndarray
    r0: int
    r: int
    pooled: WeightedSubsample
    cov_clipped: bool = False
    fallback_uniform: bool = False


def _plan_for(criterion, data, beta, sigma):
    if criterion == "mV":
        return optimal_probs_mv(data, beta, sigma)
    if criterion == "mVc":
        return optimal_probs_mvc(data, beta)
    raise ParameterError(f"criterion must be 'mV' or 'mVc', got {criterion!r}")


def two_step_estimate(
    data: Dataset,
    sigma: ErrorCovariance,
    r0: int,
    r: int,
    criterion: Criterion,
    seed: SeedKey,
    *,
    covariance: bool = True,
) -> TwoStepResult:
    """Pilot on ``r0`` uniform draws, then ``r`` draws from the optimal plan.

    ``sigma`` set to zero gives the uncorrected variant throughout: a naive
    weighted least-squares pilot, plans built without the correction, and a
    naive pooled fit.
    """
    if r0 < data.p + 1:
        raise ParameterError(f"pilot size r0={r0} must be at least p+1={data.p + 1}")
    if r < 0:
        raise ParameterError(f"r must be >= 0, got {r}")
    uniform = uniform_probs(data.n)
    pilot_sub = draw_with_replacement(uniform, r0, (seed, "pilot"))
    try:
        pilot = weighted_corrected_estimate(pilot_sub, data, sigma).beta
    except SingularSystemError as exc:
        raise PilotFailureError(
            "pilot weighted corrected Gram", exc.rcond, f"increase r0 (currently {r0})"
        ) from exc

    fallback = False
    try:
        plan = _plan_for(criterion, data, pilot, sigma)
    except DegeneratePlanError:
        plan, fallback = uniform, True

    pooled = pilot_sub + draw_with_replacement(plan, r, (seed, "main")) if r else pilot_sub
    est = weighted_corrected_estimate(pooled, data, sigma, method=f"two-step-{criterion}")
    cov, clipped = np.full((data.p, data.p), np.nan), False
    if covariance:
        cov, clipped = plugin_covariance(pooled, est.beta, data, sigma, return_clipped=True)
    return TwoStepResult(
        beta=est.beta,
        pilot_beta=pilot,
        plan=plan,
        cov=cov,
        r0=r0,
        r=r,
        pooled=pooled,
        cov_clipped=clipped,
        fallback_uniform=fallback,
    )


def one_step_estimate(
    data: Dataset, sigma: ErrorCovariance, plan: SamplingPlan, r: int, seed: SeedKey, *, method: str = "IPW"
) -> CoefficientEstimate:
    """Draw ``r`` records from ``plan`` and fit the weighted corrected loss."""
    return weighted_corrected_estimate(draw_with_replacement(plan, r, seed), data, sigma, method=method)
