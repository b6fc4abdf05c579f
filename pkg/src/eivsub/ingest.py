"""CSV ingestion, standardization and synthetic error injection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .core import Dataset, ErrorCovariance, ReplicatedDataset
from .errors import DegenerateColumnError, EmptyDatasetError, ParameterError, SchemaError
from .rng import SeedKey, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ColumnSpec:
    """Which CSV columns form the response and the covariates.

    ``replicate_groups`` maps a covariate name to the columns holding its
    repeated measurements; such a covariate need not exist as a column itself.
    """

    response: str
    covariates: Sequence[str]
    replicate_groups: Mapping[str, Sequence[str]] = field(default_factory=dict)
    standardize: bool = False

    def __post_init__(self):
        covs = tuple(self.covariates)
        groups = {k: tuple(v) for k, v in dict(self.replicate_groups).items()}
        if not covs:
            raise ParameterError("at least one covariate is required")
        if self.response in covs:
            raise ParameterError(f"response {self.response!r} is also listed as a covariate")
        if len(set(covs)) != len(covs):
            raise ParameterError("duplicate covariate names")
        for name, cols in groups.items():
            if name not in covs:
                raise ParameterError(f"replicate group {name!r} is not a covariate")
            if len(cols) < 1:
                raise ParameterError(f"replicate group {name!r} is empty")
        flat = [c for cols in groups.values() for c in cols]
        if len(set(flat)) != len(flat):
            raise ParameterError("replicate groups must reference distinct columns")
        if self.response in flat:
            raise ParameterError("response column used as a replicate")
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "replicate_groups", groups)

    def source_columns(self, covariate: str) -> tuple:
        return self.replicate_groups.get(covariate, (covariate,))

    def referenced(self) -> list:
        cols = [self.response]
        for c in self.covariates:
            cols.extend(self.source_columns(c))
        return cols


def _standardize(values: np.ndarray, name: str):
    mean = values.mean()
    sd = values.std(ddof=1) if values.size > 1 else 0.0
    if not sd > 0:
        raise DegenerateColumnError(f"column {name!r} has zero variance; cannot standardize")
    return mean, sd


def load_csv(path, spec: ColumnSpec) -> ReplicatedDataset:
    """Read a header-first, comma-separated UTF-8 file into replicated form.

    Rows with a missing or non-numeric value in any referenced column are
    dropped; the count is stored on the result.  A covariate with ``J``
    replicate columns yields ``J`` replicate vectors per record, the other
    covariates repeated unchanged, so their error variance estimates to 0.
    Records therefore share a common ``J``: the largest group size.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in spec.referenced() if c not in frame.columns]
    if missing:
        raise SchemaError(f"column {missing[0]!r} not found in {path}")
    cols = list(dict.fromkeys(spec.referenced()))
    numeric = frame[cols].apply(lambda s: pd.to_numeric(s.str.strip(), errors="coerce"))
    ok = np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
    dropped = int((~ok).sum())
    if dropped:
        log.info("dropped %d of %d rows with missing or non-numeric fields", dropped, len(frame))
    numeric = numeric[ok]
    if not ok.any():
        raise EmptyDatasetError(f"no valid rows in {path}")

    y = numeric[spec.response].to_numpy(dtype=np.float64)
    blocks = {c: numeric[list(spec.source_columns(c))].to_numpy(dtype=np.float64) for c in spec.covariates}
    if spec.standardize:
        mu, sd = _standardize(y, spec.response)
        y = (y - mu) / sd
        for c, block in blocks.items():
            # Pooled over a covariate's replicate columns so they stay comparable.
            mu, sd = _standardize(block.ravel(), c)
            blocks[c] = (block - mu) / sd

    n = y.shape[0]
    j = max(b.shape[1] for b in blocks.values())
    reps = np.empty((n, j, len(spec.covariates)))
    for k, c in enumerate(spec.covariates):
        block = blocks[c]
        if block.shape[1] == j:
            reps[:, :, k] = block
        elif block.shape[1] == 1:
            reps[:, :, k] = block
        else:
            raise ParameterError(
                f"replicate group {c!r} has {block.shape[1]} columns; all groups must have 1 or {j}"
            )
    return ReplicatedDataset(
        reps.reshape(n * j, -1),
        np.full(n, j),
        y,
        dropped_rows=dropped,
        columns=tuple(spec.covariates),
    )


def inject_error(data: Dataset, sigma_u2: float, seed: SeedKey):
    """Add ``N(0, sigma_u2 I)`` noise to the covariates only."""
    if sigma_u2 < 0:
        raise ParameterError(f"sigma_u2 must be >= 0, got {sigma_u2}")
    if sigma_u2 == 0:
        return data, ErrorCovariance.zero(data.p)
    rng = make_rng(seed, "inject")
    noise = rng.normal(0.0, np.sqrt(sigma_u2), size=data.w.shape)
    return Dataset(data.w + noise, data.y), ErrorCovariance.isotropic(data.p, sigma_u2)
