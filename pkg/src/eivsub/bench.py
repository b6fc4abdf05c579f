"""Monte Carlo benchmark harness.

A run is described by one JSON document (:class:`BenchConfig`).  Every random
quantity is drawn from a stream keyed by ``master_seed`` and the replication
id, so output is byte-identical for any number of worker threads.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from threadpoolctl import threadpool_limits

from .core import Dataset, ErrorCovariance, estimate_sigma_uu, full_corrected_estimate
from .errors import ConfigError, NumericalError
from .ingest import ColumnSpec, inject_error, load_csv
from .perturbation import replicate_estimate
from .sampling import iboss_select, leverage_probs, uniform_probs
from .simgen import SimScenario, generate
from .subsample import draw_with_replacement, two_step_estimate, weighted_corrected_estimate

METHODS = ("UNIF", "BLEV", "IBOSS", "A-Opt", "L-Opt", "CLEPS", "UA-Opt", "UL-Opt", "UCLEPS", "FULL")
MethodTag = Literal["UNIF", "BLEV", "IBOSS", "A-Opt", "L-Opt", "CLEPS", "UA-Opt", "UL-Opt", "UCLEPS", "FULL"]


def _as_list(v):
    return v if isinstance(v, list) else [v]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ScenarioConfig(_Strict):
    """Synthetic design; list-valued fields are swept."""

    case: Literal["Normal", "StudentT3"] = "Normal"
    n: Union[int, List[int]] = 10_000
    p: Union[int, List[int]] = 5
    beta_true: Optional[List[float]] = None
    sigma_u2: Union[float, List[float]] = 0.4
    noise_var: float = 1.0
    rho: float = 0.5
    t_scale: Literal["scale", "covariance"] = "scale"


class DataConfig(_Strict):
    """Real-data mode: a fixed CSV with fresh subsampling randomness."""

    path: str
    response: str
    covariates: List[str]
    replicate_groups: Dict[str, List[str]] = Field(default_factory=dict)
    standardize: bool = True
    inject_sigma_u2: Optional[Union[float, List[float]]] = None


class BenchConfig(_Strict):
    experiment: Literal["mse", "timing"] = "mse"
    scenario: Optional[ScenarioConfig] = None
    data: Optional[DataConfig] = None
    methods: List[MethodTag]
    r0: Union[int, List[int]] = 500
    r_list: List[int]
    m: Union[int, List[int]] = 10
    replications: int = 1000
    master_seed: int = 0
    output_path: Optional[str] = None
    threads: int = 1
    record_timing: bool = False
    weight_distribution: Literal["exponential", "degenerate"] = "exponential"

    @field_validator("r_list")
    @classmethod
    def _r_list(cls, v):
        if not v or min(v) < 1:
            raise ValueError("r_list must be non-empty with every entry >= 1")
        return v

    @field_validator("replications", "threads")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("master_seed")
    @classmethod
    def _seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        return v

    @model_validator(mode="after")
    def _source(self):
        if (self.scenario is None) == (self.data is None):
            raise ValueError("exactly one of 'scenario' or 'data' is required")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        if min(_as_list(self.m)) < 1 or min(_as_list(self.r0)) < 1:
            raise ValueError("m and r0 must be >= 1")
        return self

    @property
    def m_list(self) -> list:
        return _as_list(self.m)

    @property
    def r0_list(self) -> list:
        return _as_list(self.r0)


def load_config(path, **overrides) -> BenchConfig:
    """Parse and validate a JSON config; ``overrides`` replace top-level keys."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return parse_config(raw)


def parse_config(raw: dict) -> BenchConfig:
    try:
        return BenchConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class BenchRecord:
    """One aggregated cell.  ``m`` is 0 for methods without replicates."""

    method: str
    n: int
    p: int
    sigma_u2: float
    r0: int
    r: int
    m: int
    mse: float
    log10_mse: float
    failures: int
    mean_wall_time_s: float


RECORD_COLUMNS = tuple(f.name for f in fields(BenchRecord))
_INT_COLUMNS = {"n", "p", "r0", "r", "m", "failures"}


# ---------------------------------------------------------------------------
# One replication of every cell


@dataclass
class _Problem:
    """Data handed to the methods for one replication."""

    data: Dataset
    sigma: ErrorCovariance
    naive: Dataset
    target: np.ndarray


@dataclass(frozen=True)
class _Cell:
    method: str
    r0: int
    r: int
    ms: tuple  # replicate counts evaluated from one CLEPS run; () otherwise


def _budget(r0, r):
    return r0 + r


def _run_unif(pb, cell, key, cfg):
    sub = draw_with_replacement(uniform_probs(pb.data.n), _budget(cell.r0, cell.r), key)
    return [weighted_corrected_estimate(sub, pb.data, pb.sigma).beta]


def _run_blev(pb, cell, key, cfg):
    sub = draw_with_replacement(leverage_probs(pb.data), _budget(cell.r0, cell.r), key)
    return [weighted_corrected_estimate(sub, pb.data, pb.sigma).beta]


def _run_iboss(pb, cell, key, cfg):
    k = min(_budget(cell.r0, cell.r), pb.data.n)
    plan = iboss_select(pb.data, k)
    return [full_corrected_estimate(pb.data.take(plan.indices), pb.sigma).beta]


def _two_step(criterion, corrected):
    def run(pb, cell, key, cfg):
        data = pb.data if corrected else pb.naive
        sigma = pb.sigma if corrected else ErrorCovariance.zero(data.p)
        res = two_step_estimate(data, sigma, cell.r0, cell.r, criterion, key, covariance=False)
        return [res.beta]

    return run


def _cleps(corrected):
    def run(pb, cell, key, cfg):
        data = pb.data if corrected else pb.naive
        sigma = pb.sigma if corrected else ErrorCovariance.zero(data.p)
        r_eff = min(_budget(cell.r0, cell.r), data.n)
        q = r_eff / data.n
        betas = [
            replicate_estimate(data, sigma, q, key, k, cfg.weight_distribution)[0]
            for k in range(max(cell.ms))
        ]
        # Replicate k uses the same stream for every m, so smaller m are prefixes.
        cums = np.cumsum(np.vstack(betas), axis=0)
        return [cums[m - 1] / m for m in cell.ms]

    return run


def _run_full(pb, cell, key, cfg):
    return [full_corrected_estimate(pb.data, pb.sigma).beta]


_RUNNERS: Dict[str, Callable] = {
    "UNIF": _run_unif,
    "BLEV": _run_blev,
    "IBOSS": _run_iboss,
    "A-Opt": _two_step("mV", True),
    "L-Opt": _two_step("mVc", True),
    "UA-Opt": _two_step("mV", False),
    "UL-Opt": _two_step("mVc", False),
    "CLEPS": _cleps(True),
    "UCLEPS": _cleps(False),
    "FULL": _run_full,
}

# Corrected and uncorrected variants share streams (common random numbers).
_STREAM = {
    "UNIF": "unif",
    "BLEV": "blev",
    "IBOSS": "iboss",
    "A-Opt": "mV",
    "UA-Opt": "mV",
    "L-Opt": "mVc",
    "UL-Opt": "mVc",
    "CLEPS": "cleps",
    "UCLEPS": "cleps",
    "FULL": "full",
}


def _cells(cfg: BenchConfig) -> List[_Cell]:
    cells = []
    for r0, r, method in itertools.product(cfg.r0_list, cfg.r_list, cfg.methods):
        if method in ("CLEPS", "UCLEPS"):
            cells.append(_Cell(method, r0, r, tuple(cfg.m_list)))
        else:
            cells.append(_Cell(method, r0, r, ()))
    return cells


def _outputs(cell: _Cell) -> list:
    return list(cell.ms) if cell.ms else [0]


def _run_cells(pb: _Problem, cells, cfg, rep_key, timed):
    errs, times = [], []
    for cell in cells:
        key = (rep_key, _STREAM[cell.method], cell.r0, cell.r)
        t0 = time.perf_counter()
        try:
            betas = _RUNNERS[cell.method](pb, cell, key, cfg)
        except NumericalError:
            betas = [None] * len(_outputs(cell))
        elapsed = time.perf_counter() - t0
        for b in betas:
            errs.append(math.nan if b is None else float(np.sum((b - pb.target) ** 2)))
            times.append(elapsed if timed else math.nan)
    return errs, times


# ---------------------------------------------------------------------------
# Design points


@dataclass(frozen=True)
class _DesignPoint:
    n: int
    p: int
    sigma_u2: float
    index: int


def _scenario_points(sc: ScenarioConfig):
    pts = []
    for i, (n, p, s2) in enumerate(itertools.product(_as_list(sc.n), _as_list(sc.p), _as_list(sc.sigma_u2))):
        pts.append(_DesignPoint(n, p, float(s2), i))
    return pts


def _scenario(sc: ScenarioConfig, pt: _DesignPoint) -> SimScenario:
    beta = sc.beta_true
    if beta is not None and len(beta) != pt.p:
        raise ConfigError(f"beta_true has length {len(beta)} but p={pt.p}")
    return SimScenario(
        case=sc.case,
        n=pt.n,
        p=pt.p,
        beta_true=None if beta is None else tuple(beta),
        sigma_u2=pt.sigma_u2,
        noise_var=sc.noise_var,
        rho=sc.rho,
        t_scale=sc.t_scale,
    )


def _synthetic_problem(cfg, sc, pt, rep):
    # Keyed by (n, p, rep) only: sigma_u2 sweeps reuse X, U-draws and noise.
    gen = generate(_scenario(sc, pt), seed=(cfg.master_seed, "data", sc.case, pt.n, pt.p, rep))
    return _Problem(gen.dataset, gen.sigma, gen.dataset, gen.beta_true)


def real_data_problems(cfg: BenchConfig):
    """Fixed problems for real-data mode, one per injected error level.

    Replicated covariates enter as record means with ``Sigma_hat / J``; the
    uncorrected methods see the first replicate.  The MSE target is the
    full-data corrected estimate.
    """
    dc = cfg.data
    spec = ColumnSpec(dc.response, dc.covariates, dc.replicate_groups, dc.standardize)
    rep = load_csv(dc.path, spec)
    out = []
    if dc.replicate_groups:
        if dc.inject_sigma_u2 is not None:
            raise ConfigError("inject_sigma_u2 cannot be combined with replicate_groups")
        j = int(rep.counts[0])
        if not np.all(rep.counts == j):
            raise ConfigError("real-data subsampling needs the same replicate count on every record")
        sigma = estimate_sigma_uu(rep).scaled(1.0 / j)
        data = rep.averaged()
        target = full_corrected_estimate(data, sigma).beta
        out.append((_DesignPoint(data.n, data.p, float(np.trace(sigma.sigma_uu) / data.p), 0),
                    _Problem(data, sigma, rep.first(), target)))
        return out
    base = rep.first()
    levels = [0.0] if dc.inject_sigma_u2 is None else [float(s) for s in _as_list(dc.inject_sigma_u2)]
    for i, s2 in enumerate(levels):
        data, sigma = inject_error(base, s2, (cfg.master_seed, "inject", i))
        target = full_corrected_estimate(data, sigma).beta
        out.append((_DesignPoint(data.n, data.p, s2, i), _Problem(data, sigma, data, target)))
    return out


def _aggregate(cfg, pt, cells, err_rows, time_rows) -> List[BenchRecord]:
    errs = np.array(err_rows, dtype=np.float64).reshape(len(err_rows), -1)
    tms = np.array(time_rows, dtype=np.float64).reshape(len(time_rows), -1)
    records = []
    col = 0
    for cell in cells:
        for m in _outputs(cell):
            e = errs[:, col]
            ok = e[~np.isnan(e)]
            failures = int(e.size - ok.size)
            mse = math.fsum(ok.tolist()) / ok.size if ok.size else math.nan
            log_mse = math.log10(mse) if ok.size and mse > 0 else math.nan
            t = tms[:, col]
            wall = math.fsum(t.tolist()) / t.size if not np.isnan(t).any() else math.nan
            records.append(
                BenchRecord(cell.method, pt.n, pt.p, pt.sigma_u2, cell.r0, cell.r, m, mse, log_mse, failures, wall)
            )
            col += 1
    return records


def run_mse_experiment(cfg: BenchConfig, threads: Optional[int] = None) -> List[BenchRecord]:
    """Monte Carlo MSE for every (design point, r0, r, method, m) cell.

    Synthetic mode draws fresh data per replication; real-data mode keeps the
    file fixed and redraws only the subsampling randomness.  Methods other
    than the two-step ones use a budget of ``r0 + r`` records (CLEPS: an
    inclusion rate of ``(r0 + r) / n``).
    """
    threads = threads or cfg.threads
    cells = _cells(cfg)
    if cfg.scenario is not None:
        points = [(pt, None) for pt in _scenario_points(cfg.scenario)]
    else:
        points = real_data_problems(cfg)

    records: List[BenchRecord] = []
    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=threads) as pool:
        for pt, fixed in points:
            def one(rep, pt=pt, fixed=fixed):
                pb = fixed if fixed is not None else _synthetic_problem(cfg, cfg.scenario, pt, rep)
                return _run_cells(pb, cells, cfg, (cfg.master_seed, "rep", pt.index, rep), cfg.record_timing)

            results = list(pool.map(one, range(cfg.replications)))
            records.extend(_aggregate(cfg, pt, cells, [r[0] for r in results], [r[1] for r in results]))
    return records


def run_timing_experiment(cfg: BenchConfig, threads: Optional[int] = None) -> List[BenchRecord]:
    """Median wall-clock time per method on one dataset per design point.

    Probability construction, sampling and solving are inside the timed
    region; data generation and loading are not.  At least 5 timed
    replications per cell.  The ``mean_wall_time_s`` column holds the median.
    """
    cells = _cells(cfg)
    reps = max(5, cfg.replications)
    if cfg.scenario is not None:
        points = [
            (pt, _synthetic_problem(cfg, cfg.scenario, pt, 0)) for pt in _scenario_points(cfg.scenario)
        ]
    else:
        points = real_data_problems(cfg)
    records = []
    # Timing runs serially with BLAS at its default thread count.
    for pt, pb in points:
        for cell in cells:
            times, errs = [], []
            for rep in range(reps):
                key = (cfg.master_seed, "timing", pt.index, rep, _STREAM[cell.method], cell.r0, cell.r)
                t0 = time.perf_counter()
                try:
                    betas = _RUNNERS[cell.method](pb, cell, key, cfg)
                except NumericalError:
                    betas = None
                times.append(time.perf_counter() - t0)
                errs.append(math.nan if betas is None else float(np.sum((betas[-1] - pb.target) ** 2)))
            e = np.array(errs)
            ok = e[~np.isnan(e)]
            mse = math.fsum(ok.tolist()) / ok.size if ok.size else math.nan
            records.append(
                BenchRecord(
                    cell.method,
                    pt.n,
                    pt.p,
                    pt.sigma_u2,
                    cell.r0,
                    cell.r,
                    max(cell.ms) if cell.ms else 0,
                    mse,
                    math.log10(mse) if ok.size and mse > 0 else math.nan,
                    int(e.size - ok.size),
                    float(np.median(times)),
                )
            )
    return records


def run(cfg: BenchConfig, threads: Optional[int] = None) -> List[BenchRecord]:
    if cfg.experiment == "timing":
        return run_timing_experiment(cfg, threads)
    return run_mse_experiment(cfg, threads)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(records, path) -> None:
    """Write records as CSV in :data:`RECORD_COLUMNS` order, one row per cell."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(v) for v in astuple(rec)])


def read_results(path) -> List[BenchRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
            raise ConfigError(f"unexpected result columns {reader.fieldnames}")
        out = []
        for row in reader:
            kw = {}
            for name in RECORD_COLUMNS:
                raw = row[name]
                kw[name] = raw if name == "method" else int(raw) if name in _INT_COLUMNS else float(raw)
            out.append(BenchRecord(**kw))
        return out
