"""Synthetic data for the benchmark scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .core import Dataset, ErrorCovariance
from .errors import ParameterError
from .rng import SeedKey, make_rng

Case = Literal["Normal", "StudentT3"]


def ar1_correlation(p: int, rho: float = 0.5) -> np.ndarray:
    """``Sigma[j, k] = rho ** |j - k|``."""
    lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return rho**lag


@dataclass(frozen=True)
class SimScenario:
    """Covariate law, size and error levels of one synthetic design.

    ``t_scale`` says how ``t3(0, Sigma)`` is read: ``"scale"`` treats Sigma as
    the scale matrix (covariance 3 Sigma); ``"covariance"`` rescales so the
    covariance equals Sigma.
    """

    case: Case = "Normal"
    n: int = 10_000
    p: int = 5
    beta_true: Optional[tuple] = None
    sigma_u2: float = 0.4
    noise_var: float = 1.0
    seed: int = 0
    rho: float = 0.5
    t_scale: Literal["scale", "covariance"] = "scale"

    def __post_init__(self):
        if self.case not in ("Normal", "StudentT3"):
            raise ParameterError(f"unknown case {self.case!r}")
        if not self.n >= self.p >= 1:
            raise ParameterError(f"need n >= p >= 1, got n={self.n}, p={self.p}")
        if self.sigma_u2 < 0:
            raise ParameterError(f"sigma_u2 must be >= 0, got {self.sigma_u2}")
        if not self.noise_var > 0:
            raise ParameterError(f"noise_var must be > 0, got {self.noise_var}")
        if self.t_scale not in ("scale", "covariance"):
            raise ParameterError(f"unknown t_scale {self.t_scale!r}")
        beta = np.ones(self.p) if self.beta_true is None else np.asarray(self.beta_true, dtype=float)
        if beta.shape != (self.p,):
            raise ParameterError(f"beta_true must have length p={self.p}")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in beta))

    @property
    def beta(self) -> np.ndarray:
        return np.array(self.beta_true)

    def error_covariance(self) -> ErrorCovariance:
        return ErrorCovariance.isotropic(self.p, self.sigma_u2)


@dataclass(frozen=True)
class GeneratedData:
    x_true: np.ndarray
    dataset: Dataset
    u: np.ndarray
    sigma: ErrorCovariance
    beta_true: np.ndarray = field(default_factory=lambda: np.empty(0))


def _covariates(rng, case, n, corr, t_scale):
    z = rng.multivariate_normal(np.zeros(corr.shape[0]), corr, size=n, method="cholesky")
    if case == "Normal":
        return z
    g = rng.chisquare(3, size=n)
    x = z / np.sqrt(g / 3.0)[:, None]
    if t_scale == "covariance":
        x /= np.sqrt(3.0)
    return x


def generate(scenario: SimScenario, seed: Optional[SeedKey] = None) -> GeneratedData:
    """Draw ``X``, ``U``, ``eps`` and return ``W = X + U``, ``y = X beta + eps``.

    ``seed`` overrides ``scenario.seed`` and may be a key path.
    """
    rng = make_rng(scenario.seed if seed is None else seed, "simgen")
    corr = ar1_correlation(scenario.p, scenario.rho)
    x = _covariates(rng, scenario.case, scenario.n, corr, scenario.t_scale)
    # Always draw the standard normals so designs differing only in sigma_u2
    # share X, the error directions and eps.
    u = rng.standard_normal(size=x.shape) * np.sqrt(scenario.sigma_u2)
    eps = rng.normal(0.0, np.sqrt(scenario.noise_var), size=scenario.n)
    beta = scenario.beta
    # W - X must reproduce u bit-for-bit, so keep u as W - X.
    w = x + u
    u = w - x
    return GeneratedData(
        x_true=x,
        dataset=Dataset(w, x @ beta + eps),
        u=u,
        sigma=scenario.error_covariance(),
        beta_true=beta,
    )


def example1_scenario(seed: SeedKey = 1, n: int = 1000, sigma_u2: float = 0.25) -> GeneratedData:
    """Univariate illustration: ``y = 0.5 + 0.5 x + eps``, ``w = x + u``.

    The design carries an intercept column first; it is error-free, so its
    row and column of ``sigma_uu`` are zero.
    """
    rng = make_rng(seed, "example1")
    x = rng.normal(size=n)
    eps = rng.normal(size=n)
    u = rng.normal(0.0, np.sqrt(sigma_u2), size=n) if sigma_u2 > 0 else np.zeros(n)
    beta = np.array([0.5, 0.5])
    xm = np.column_stack([np.ones(n), x])
    wm = np.column_stack([np.ones(n), x + u])
    return GeneratedData(
        x_true=xm,
        dataset=Dataset(wm, xm @ beta + eps),
        u=wm - xm,
        sigma=ErrorCovariance.isotropic(2, sigma_u2, error_free=[0]),
        beta_true=beta,
    )
