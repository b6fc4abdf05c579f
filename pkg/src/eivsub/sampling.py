"""Subsampling designs: uniform, leverage, A-/L-optimal and IBOSS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from ._linalg import Factorization, gram
from .core import Dataset, ErrorCovariance, _check_beta_sigma, corrected_gram
from .errors import DegeneratePlanError, EmptyDatasetError, ParameterError, SizeError

Design = Literal["UNIF", "BLEV", "mV", "mVc", "UmV", "UmVc", "IBOSS"]
DESIGNS = ("UNIF", "BLEV", "mV", "mVc", "UmV", "UmVc", "IBOSS")


@dataclass(frozen=True)
class SamplingPlan:
    """Either a probability vector over records or a fixed index set."""

    design: Design
    probs: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ParameterError(f"unknown design {self.design!r}")
        if (self.probs is None) == (self.indices is None):
            raise ParameterError("a plan carries exactly one of probs or indices")
        if self.probs is not None:
            p = np.array(self.probs, dtype=np.float64)
            if p.ndim != 1 or p.size == 0:
                raise ParameterError("probs must be a non-empty vector")
            if not np.all(np.isfinite(p)) or p.min() < 0:
                raise ParameterError("probs must be finite and non-negative")
            if not p.max() > 0:
                raise DegeneratePlanError("all sampling probabilities are zero")
            if abs(p.sum() - 1.0) > 1e-12:
                raise ParameterError(f"probs sum to {p.sum()!r}, not 1")
            p.setflags(write=False)
            object.__setattr__(self, "probs", p)
        else:
            idx = np.array(self.indices, dtype=np.int64)
            if idx.ndim != 1 or np.unique(idx).size != idx.size:
                raise ParameterError("indices must be a vector of distinct records")
            idx.setflags(write=False)
            object.__setattr__(self, "indices", idx)

    @property
    def kind(self) -> str:
        return "probabilistic" if self.probs is not None else "deterministic"

    @property
    def n(self) -> Optional[int]:
        return None if self.probs is None else self.probs.shape[0]


def _normalize(scores, design, pi_floor=0.0) -> SamplingPlan:
    total = scores.sum()
    if not total > 0 or not np.isfinite(total):
        raise DegeneratePlanError(
            f"{design}: every sampling score is zero (perfect fit?); probabilities undefined"
        )
    probs = scores / total
    if pi_floor:
        if not 0.0 <= pi_floor <= 1.0:
            raise ParameterError(f"pi_floor must lie in [0, 1], got {pi_floor}")
        probs = (1.0 - pi_floor) * probs + pi_floor / probs.shape[0]
    # One renormalization brings the sum within a few ulps of 1.
    probs = probs / probs.sum()
    return SamplingPlan(design, probs=probs)


def uniform_probs(n: int) -> SamplingPlan:
    if n < 1:
        raise EmptyDatasetError("uniform plan needs n >= 1")
    return SamplingPlan("UNIF", probs=np.full(n, 1.0 / n))


def _residuals(data: Dataset, beta):
    """``|y_i - W_i' beta|`` with values at rounding level set to exactly 0."""
    resid = np.abs(data.y - data.w @ beta)
    scale = np.abs(data.y) + np.abs(data.w) @ np.abs(beta)
    resid[resid <= 16 * np.finfo(np.float64).eps * scale] = 0.0
    return resid


def optimal_probs_mv(
    data: Dataset, beta_pilot, sigma: ErrorCovariance, *, pi_floor: float = 0.0, design: Design = "mV"
) -> SamplingPlan:
    """A-optimal probabilities ``pi_i ~ |e_i| * ||H_W^{-1} W_i||``.

    ``H_W`` is factorized once and applied to all rows, O(n p^2) in total.
    """
    beta = _check_beta_sigma(beta_pilot, data.p, sigma)
    fac = Factorization(corrected_gram(data, sigma), "H_W = (1/n) sum W W' - Sigma_uu")
    lev = np.linalg.norm(fac.solve(data.w.T), axis=0)
    return _normalize(_residuals(data, beta) * lev, design, pi_floor)


def optimal_probs_mvc(
    data: Dataset, beta_pilot, *, pi_floor: float = 0.0, design: Design = "mVc"
) -> SamplingPlan:
    """L-optimal probabilities ``pi_i ~ |e_i| * ||W_i||``; O(n p)."""
    beta = _check_beta_sigma(beta_pilot, data.p)
    return _normalize(_residuals(data, beta) * np.linalg.norm(data.w, axis=1), design, pi_floor)


def leverage_probs(data: Dataset) -> SamplingPlan:
    """Statistical leverage ``h_ii / p``."""
    fac = Factorization(gram(data.w), "W'W")
    # h_ii = W_i' (W'W)^{-1} W_i
    lev = np.einsum("ij,ji->i", data.w, fac.solve(data.w.T))
    lev = np.clip(lev, 0.0, None)
    return _normalize(lev, "BLEV")


def uncorrected_variant(
    plan_kind: Literal["mV", "mVc"], data: Dataset, beta_pilot_naive, *, pi_floor: float = 0.0
) -> SamplingPlan:
    """The mV/mVc plans with ``Sigma_uu`` forced to zero."""
    if plan_kind == "mV":
        return optimal_probs_mv(
            data, beta_pilot_naive, ErrorCovariance.zero(data.p), pi_floor=pi_floor, design="UmV"
        )
    if plan_kind == "mVc":
        return optimal_probs_mvc(data, beta_pilot_naive, pi_floor=pi_floor, design="UmVc")
    raise ParameterError(f"plan_kind must be 'mV' or 'mVc', got {plan_kind!r}")


def _smallest_stable(vals, take):
    """Positions of the ``take`` smallest values, ties broken by position."""
    if take < vals.size:
        kth = np.partition(vals, take - 1)[take - 1]
        sub = np.flatnonzero(vals <= kth)
    else:
        sub = np.arange(vals.size)
    return sub[np.argsort(vals[sub], kind="stable")[:take]]


def iboss_select(data: Dataset, k: int) -> SamplingPlan:
    """Deterministic IBOSS subdata of size ``k``.

    For each column in turn, the ``k // (2p)`` smallest and then the
    ``k // (2p)`` largest records not yet chosen are taken; ties go to the
    lower record index.  Any shortfall is filled with the remaining records of
    largest ``max_j |w_ij|``.
    """
    n, p = data.w.shape
    if k > n:
        raise SizeError(f"IBOSS subdata size k={k} exceeds n={n}")
    if k < 1:
        raise SizeError(f"IBOSS subdata size must be >= 1, got {k}")
    per_side = k // (2 * p)
    available = np.ones(n, dtype=bool)
    chosen = []
    for j in range(p):
        if per_side == 0:
            break
        for sign in (1.0, -1.0):
            cand = np.flatnonzero(available)
            take = min(per_side, cand.size)
            if take == 0:
                continue
            picked = cand[_smallest_stable(sign * data.w[cand, j], take)]
            available[picked] = False
            chosen.append(picked)
    selected = np.concatenate(chosen) if chosen else np.empty(0, dtype=np.int64)
    short = k - selected.size
    if short > 0:
        cand = np.flatnonzero(available)
        score = np.abs(data.w[cand]).max(axis=1)
        fill = cand[_smallest_stable(-score, short)]
        selected = np.concatenate([selected, fill])
    return SamplingPlan("IBOSS", indices=np.sort(selected))
