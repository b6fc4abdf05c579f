"""Corrected-likelihood estimation for linear models with covariate error.

The observed design is ``W = X + U`` with ``Cov(U) = sigma_uu``.  Ordinary
least squares on ``W`` is attenuated; subtracting ``beta' sigma_uu beta / 2``
from the squared-error loss removes the bias and gives the closed form

    beta_hat = (sum W_i W_i' - n sigma_uu)^{-1} sum W_i y_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from ._linalg import Factorization, cross, gram, solve_checked, symmetrize
from .errors import (
    DimensionError,
    EmptyDatasetError,
    InsufficientReplicationError,
    ParameterError,
)

ErrorSource = Literal["known", "estimated-from-replicates", "zero"]


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observed covariates ``w`` (n x p) and response ``y`` (n,)."""

    w: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        w = _frozen(self.w, 2, "w")
        y = _frozen(self.y, 1, "y")
        if w.shape[0] != y.shape[0]:
            raise DimensionError(f"w has {w.shape[0]} rows but y has length {y.shape[0]}")
        if w.shape[0] == 0:
            raise EmptyDatasetError("dataset has no records")
        if w.shape[1] < 1 or w.shape[0] < w.shape[1]:
            raise DimensionError(f"need n >= p >= 1, got n={w.shape[0]}, p={w.shape[1]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise ParameterError("dataset contains NaN or Inf")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def p(self) -> int:
        return self.w.shape[1]

    def take(self, indices) -> "Dataset":
        return Dataset(self.w[indices], self.y[indices])


@dataclass(frozen=True)
class ErrorCovariance:
    """Measurement-error covariance ``sigma_uu`` with its provenance."""

    sigma_uu: np.ndarray
    source: ErrorSource = "known"

    def __post_init__(self):
        s = _frozen(self.sigma_uu, 2, "sigma_uu")
        if s.shape[0] != s.shape[1]:
            raise DimensionError(f"sigma_uu must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ParameterError("sigma_uu contains NaN or Inf")
        scale = max(np.abs(s).max(), np.finfo(float).tiny)
        if np.abs(s - s.T).max() > 1e-12 * scale:
            raise ParameterError("sigma_uu is not symmetric")
        tr = np.trace(s)
        if s.size and np.linalg.eigvalsh(symmetrize(s)).min() < -1e-10 * max(tr, 0.0):
            raise ParameterError("sigma_uu is not positive semidefinite")
        object.__setattr__(self, "sigma_uu", s)

    @classmethod
    def zero(cls, p: int) -> "ErrorCovariance":
        return cls(np.zeros((p, p)), "zero")

    @classmethod
    def isotropic(cls, p: int, sigma_u2: float, error_free: Sequence[int] = ()) -> "ErrorCovariance":
        """``sigma_u2 * I`` with rows/cols listed in ``error_free`` zeroed."""
        if sigma_u2 < 0:
            raise ParameterError(f"sigma_u2 must be >= 0, got {sigma_u2}")
        diag = np.full(p, float(sigma_u2))
        diag[list(error_free)] = 0.0
        return cls(np.diag(diag), "zero" if sigma_u2 == 0 else "known")

    @property
    def p(self) -> int:
        return self.sigma_uu.shape[0]

    def scaled(self, factor: float) -> "ErrorCovariance":
        return ErrorCovariance(self.sigma_uu * factor, self.source)


@dataclass(frozen=True)
class ReplicatedDataset:
    """Records observed with ``J_i >= 1`` replicate covariate vectors.

    Replicates are stored stacked: ``replicates`` has ``sum(J_i)`` rows, the
    first ``counts[0]`` belonging to record 0 and so on.
    """

    replicates: np.ndarray
    counts: np.ndarray
    y: np.ndarray
    dropped_rows: int = 0
    columns: tuple = field(default=())

    def __post_init__(self):
        reps = _frozen(self.replicates, 2, "replicates")
        counts = np.array(self.counts, dtype=np.int64)
        y = _frozen(self.y, 1, "y")
        if counts.ndim != 1 or counts.shape[0] != y.shape[0]:
            raise DimensionError("counts must have one entry per response value")
        if counts.size == 0:
            raise EmptyDatasetError("dataset has no records")
        if counts.min() < 1:
            raise ParameterError("every record needs at least one replicate")
        if counts.sum() != reps.shape[0]:
            raise DimensionError(
                f"counts sum to {counts.sum()} but {reps.shape[0]} replicate rows given"
            )
        counts.setflags(write=False)
        object.__setattr__(self, "replicates", reps)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_records(cls, records: Sequence, y) -> "ReplicatedDataset":
        """Build from a per-record list of (J_i x p) arrays."""
        mats = [np.atleast_2d(np.asarray(r, dtype=np.float64)) for r in records]
        widths = {m.shape[1] for m in mats}
        if len(widths) != 1:
            raise DimensionError(f"replicate vectors have inconsistent lengths {sorted(widths)}")
        return cls(np.vstack(mats), [m.shape[0] for m in mats], y)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def p(self) -> int:
        return self.replicates.shape[1]

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.counts)[:-1]))

    def means(self) -> np.ndarray:
        """Per-record replicate means (n x p)."""
        sums = np.add.reduceat(self.replicates, self.offsets, axis=0)
        return sums / self.counts[:, None]

    def averaged(self) -> Dataset:
        return Dataset(self.means(), self.y)

    def first(self) -> Dataset:
        """Dataset built from each record's first replicate only."""
        return Dataset(self.replicates[self.offsets], self.y)


@dataclass(frozen=True)
class CoefficientEstimate:
    beta: np.ndarray
    method: str
    solve_condition: float = float("nan")

    def __post_init__(self):
        b = _frozen(self.beta, 1, "beta")
        if not np.all(np.isfinite(b)):
            raise ParameterError("coefficient estimate is not finite")
        object.__setattr__(self, "beta", b)


def _check_beta_sigma(beta, p, sigma: Optional[ErrorCovariance] = None):
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (p,):
        raise DimensionError(f"beta must have length {p}, got shape {beta.shape}")
    if sigma is not None and sigma.p != p:
        raise DimensionError(f"sigma_uu is {sigma.p}x{sigma.p} but data has p={p}")
    return beta


def corrected_loss(beta, data: Dataset, sigma: ErrorCovariance) -> float:
    """Corrected least-squares loss; may be negative."""
    beta = _check_beta_sigma(beta, data.p, sigma)
    resid = data.y - data.w @ beta
    return 0.5 * float(np.mean(resid**2)) - 0.5 * float(beta @ sigma.sigma_uu @ beta)


def corrected_gradient(beta, data: Dataset, sigma: ErrorCovariance) -> np.ndarray:
    """Gradient of :func:`corrected_loss` with respect to ``beta``."""
    beta = _check_beta_sigma(beta, data.p, sigma)
    resid = data.y - data.w @ beta
    return -(data.w.T @ resid) / data.n - sigma.sigma_uu @ beta


def ols(data: Dataset) -> np.ndarray:
    """Naive least squares on the observed design."""
    return np.linalg.lstsq(data.w, data.y, rcond=None)[0]


def corrected_gram(data: Dataset, sigma: ErrorCovariance) -> np.ndarray:
    """``H_W = (1/n) sum W_i W_i' - sigma_uu``."""
    return gram(data.w) / data.n - sigma.sigma_uu


def full_corrected_estimate(
    data: Dataset, sigma: ErrorCovariance, *, ridge: bool = False
) -> CoefficientEstimate:
    if sigma.p != data.p:
        raise DimensionError(f"sigma_uu is {sigma.p}x{sigma.p} but data has p={data.p}")
    g = gram(data.w) - data.n * sigma.sigma_uu
    beta, rcond = solve_checked(
        g,
        cross(data.w, data.y),
        "corrected Gram sum(W W') - n*Sigma_uu",
        ridge=ridge,
        hint="Sigma_uu may be too large relative to the second moment of W",
    )
    return CoefficientEstimate(beta, "FULL", rcond)


def estimate_sigma_uu(rep: ReplicatedDataset) -> ErrorCovariance:
    """Pooled within-record covariance of the replicates."""
    dof = int((rep.counts - 1).sum())
    if dof < 1:
        raise InsufficientReplicationError(
            "estimating Sigma_uu needs at least one record with J_i >= 2"
        )
    centered = rep.replicates - np.repeat(rep.means(), rep.counts, axis=0)
    s = symmetrize(gram(centered)) / dof
    return ErrorCovariance(s, "estimated-from-replicates")


def replicate_averaged_estimate(
    rep: ReplicatedDataset, sigma: ErrorCovariance, *, ridge: bool = False
) -> CoefficientEstimate:
    """Corrected fit on record means, each carrying ``sigma / J_i`` error."""
    if sigma.p != rep.p:
        raise DimensionError(f"sigma_uu is {sigma.p}x{sigma.p} but data has p={rep.p}")
    wbar = rep.means()
    g = gram(wbar) - float(np.sum(1.0 / rep.counts)) * sigma.sigma_uu
    beta, rcond = solve_checked(
        g,
        cross(wbar, rep.y),
        "replicate-corrected Gram sum(Wbar Wbar' - Sigma_uu/J_i)",
        ridge=ridge,
    )
    return CoefficientEstimate(beta, "FULL-replicates", rcond)


def gaussian_fourth_moment_term(beta, sigma_uu) -> np.ndarray:
    """``E[((U U' - S) beta)^{(x)2}]`` for ``U ~ N(0, S)``.

    By Isserlis' theorem this equals ``(S beta)(S beta)' + (beta' S beta) S``.
    """
    sb = sigma_uu @ beta
    return np.outer(sb, sb) + float(beta @ sb) * sigma_uu


def noise_variance_plugin(data: Dataset, beta, sigma: ErrorCovariance) -> float:
    """Residual variance net of the ``beta' S beta`` inflation, floored at 1e-12."""
    resid = data.y - data.w @ beta
    return max(float(np.mean(resid**2)) - float(beta @ sigma.sigma_uu @ beta), 1e-12)


def full_asymptotic_covariance(
    data: Dataset, beta, sigma: ErrorCovariance, noise_var: Optional[float] = None
) -> np.ndarray:
    """Plug-in sandwich ``H^{-1} Gamma H^{-1} / n`` for the full-data estimator.

    ``noise_var`` defaults to :func:`noise_variance_plugin`.  The fourth-moment
    part of ``Gamma`` assumes Gaussian measurement error.
    """
    beta = _check_beta_sigma(beta, data.p, sigma)
    if noise_var is None:
        noise_var = noise_variance_plugin(data, beta, sigma)
    if not noise_var > 0:
        raise ParameterError(f"noise_var must be > 0, got {noise_var}")
    s = sigma.sigma_uu
    h = corrected_gram(data, sigma)
    gamma = (
        noise_var * h
        + h * float(beta @ s @ beta)
        + gaussian_fourth_moment_term(beta, s)
        + noise_var * s
    )
    fac = Factorization(h, "H_W = (1/n) sum W W' - Sigma_uu")
    hinv_gamma = fac.solve(gamma)
    return symmetrize(fac.solve(hinv_gamma.T).T) / data.n


def assumption_diagnostics(data: Dataset, sigma: ErrorCovariance, beta_hat, probs=None) -> dict:
    """Finite-sample quantities behind the regularity conditions.

    Returns the smallest eigenvalue of ``H_W``, the fourth moments of ``||W_i||``
    and of the residuals, a (2+delta)-moment with delta=1 and, when ``probs``
    is given, ``max_i 1/(n pi_i)``.  These are sanity numbers only.
    """
    resid = data.y - data.w @ np.asarray(beta_hat, dtype=np.float64)
    norms = np.linalg.norm(data.w, axis=1)
    out = {
        "min_eig_H_W": float(np.linalg.eigvalsh(symmetrize(corrected_gram(data, sigma))).min()),
        "mean_norm4_W": float(np.mean(norms**4)),
        "mean_resid4": float(np.mean(resid**4)),
        "mean_resid3_norm3": float(np.mean(np.abs(resid) ** 3 * norms**3)),
    }
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            out["max_inv_n_pi"] = float(np.max(1.0 / (data.n * probs)))
    return out
