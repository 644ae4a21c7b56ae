"""Experiment runner: error sweeps, selection-timing sweeps, and tail-rank sweeps.

A method token names a selector/estimator pair, e.g. ``DG-LSE`` or
``BDG-BE``.  Selectors: ``DG`` (determinant greedy), ``BDG`` (Bayesian
determinant greedy, fast path), ``BDG-NAIVE`` (dense reference), ``RANDOM``,
``BRUTE`` (exhaustive).  Estimators: ``LSE`` (pseudo-inverse least squares),
``BE`` (Bayesian MAP).

All non-timing outputs are deterministic for a fixed configuration and seed
list; wall-clock columns are the only fields allowed to differ between runs.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (
    MaskedGrid,
    RandomSpecConfig,
    gen_random_dataset,
    inv_sqrt_spectrum,
    load_masked_grid,
    read_matrix,
    scatter_to_grid,
)
from .errors import InvalidConfigError, PodsenseError
from .estimation import (
    lse,
    map_estimate,
    measurement_setup,
    objective_logdet,
    reconstruction_error,
)
from .noise import NoiseModel, build_noise_model
from .pod import PodBasis, SnapshotMatrix, TruncationConfig, compute_pod
from .selection import (
    CandidateSet,
    exclude_low_rms,
    select_bdg_fast,
    select_bdg_naive,
    select_brute_force,
    select_dg,
    select_random,
)

__all__ = [
    "METHODS",
    "parse_method",
    "GeneratedDataset",
    "MatrixFileDataset",
    "GridFileDataset",
    "ExperimentConfig",
    "SweepRecord",
    "SweepReport",
    "run_error_sweep",
    "run_timing_sweep",
    "run_r2_sweep",
    "emit_report",
]

_SELECTORS = ("DG", "BDG", "BDG-NAIVE", "RANDOM", "BRUTE")
_ESTIMATORS = ("LSE", "BE")

#: Every accepted method token.
METHODS = tuple(f"{s}-{e}" for s in _SELECTORS for e in _ESTIMATORS)


def parse_method(token: str) -> tuple[str, str]:
    """Split a method token into (selector, estimator), validating both."""
    selector, _, estimator = token.rpartition("-")
    if selector not in _SELECTORS or estimator not in _ESTIMATORS:
        raise InvalidConfigError(
            f"unknown method {token!r}; expected one of {', '.join(METHODS)}"
        )
    return selector, estimator


# ---------------------------------------------------------------------------
# Dataset specifications
# ---------------------------------------------------------------------------


@dataclass
class GeneratedDataset:
    """Random matrix family; a fresh matrix is drawn per sweep seed."""

    n: int
    m: int
    spectrum: np.ndarray | None = None  # default: 1/sqrt(k)

    def load(self, seed: int) -> tuple[SnapshotMatrix, MaskedGrid | None]:
        spectrum = self.spectrum if self.spectrum is not None else inv_sqrt_spectrum(self.m)
        return gen_random_dataset(
            RandomSpecConfig(n=self.n, m=self.m, spectrum=spectrum, seed=seed)
        ), None

    def describe(self) -> dict:
        return {
            "kind": "generated",
            "n": self.n,
            "m": self.m,
            "spectrum": "invsqrt" if self.spectrum is None else list(map(float, self.spectrum)),
        }


@dataclass
class MatrixFileDataset:
    """Matrix file on disk; identical for every seed."""

    path: str
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def load(self, seed: int) -> tuple[SnapshotMatrix, MaskedGrid | None]:
        if self._cache is None:
            self._cache = (read_matrix(self.path), None)
        return self._cache

    def describe(self) -> dict:
        return {"kind": "matrix-file", "path": str(self.path)}


@dataclass
class GridFileDataset:
    """Masked-grid dataset (value CSVs plus mask CSV); identical per seed."""

    values: str
    mask: str
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    def load(self, seed: int) -> tuple[SnapshotMatrix, MaskedGrid]:
        if self._cache is None:
            self._cache = load_masked_grid(self.values, self.mask)
        return self._cache

    def describe(self) -> dict:
        return {"kind": "grid-files", "values": str(self.values), "mask": str(self.mask)}


@dataclass
class InMemoryDataset:
    """Pre-built data, mainly for tests; identical for every seed."""

    X: SnapshotMatrix
    grid: MaskedGrid | None = None

    def load(self, seed: int) -> tuple[SnapshotMatrix, MaskedGrid | None]:
        return self.X, self.grid

    def describe(self) -> dict:
        return {"kind": "in-memory", "n": self.X.n, "m": self.X.m}


# ---------------------------------------------------------------------------
# Configuration and report containers
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: object
    r1: int
    p_values: list[int]
    methods: list[str]
    seeds: list[int]
    r2: int | None = None  # None: keep the full tail
    r2_values: list[int] | None = None  # tail-rank sweep only
    exclusion_factor: float = 1e-3
    centering: bool = False
    split: float | None = None
    timing_repeats: int = 3

    def validate(self) -> None:
        if self.r1 < 1:
            raise InvalidConfigError(f"r1 must be >= 1, got {self.r1}")
        if not self.p_values:
            raise InvalidConfigError("p_values must be non-empty")
        if any(p < 1 for p in self.p_values):
            raise InvalidConfigError(f"p values must be positive, got {self.p_values}")
        if list(self.p_values) != sorted(set(self.p_values)):
            raise InvalidConfigError("p_values must be strictly ascending")
        if not self.methods:
            raise InvalidConfigError("methods must be non-empty")
        for token in self.methods:
            parse_method(token)
        if not self.seeds:
            raise InvalidConfigError("seeds must be non-empty")
        if not 0.0 <= self.exclusion_factor < 1.0:
            raise InvalidConfigError(
                f"exclusion factor must be in [0, 1), got {self.exclusion_factor}"
            )
        if self.r2 is not None and self.r2 < 0:
            raise InvalidConfigError(f"r2 must be >= 0, got {self.r2}")
        if self.r2_values is not None:
            if not self.r2_values:
                raise InvalidConfigError("r2_values must be non-empty when given")
            if any(r < 0 for r in self.r2_values):
                raise InvalidConfigError("r2 values must be >= 0")
        if self.split is not None and not 0.0 < self.split < 1.0:
            raise InvalidConfigError(f"split fraction must be in (0, 1), got {self.split}")
        if self.timing_repeats < 1:
            raise InvalidConfigError("timing_repeats must be >= 1")

    def describe(self) -> dict:
        return {
            "dataset": self.dataset.describe(),
            "r1": self.r1,
            "r2": self.r2,
            "r2_values": self.r2_values,
            "p_values": list(self.p_values),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "exclusion_factor": self.exclusion_factor,
            "centering": self.centering,
            "split": self.split,
            "timing_repeats": self.timing_repeats,
        }


@dataclass(frozen=True)
class SweepRecord:
    method: str
    p: int
    seed: int
    r2: int
    error_sum: float
    error_mean: float
    select_time: float
    estimate_time: float
    objective: float
    indices: tuple[int, ...]


@dataclass
class SweepReport:
    records: list[SweepRecord]
    config: ExperimentConfig
    grid: MaskedGrid | None = None
    excluded_points: dict[int, int] = field(default_factory=dict)

    def filtered(self, **conditions) -> list[SweepRecord]:
        """Records matching all the given field values."""
        out = self.records
        for name, value in conditions.items():
            out = [r for r in out if getattr(r, name) == value]
        return out

    def mean_error(self, **conditions) -> float:
        """Mean of ``error_mean`` over the matching records."""
        rows = self.filtered(**conditions)
        if not rows:
            raise KeyError(f"no records match {conditions}")
        return float(np.mean([r.error_mean for r in rows]))


# ---------------------------------------------------------------------------
# Per-seed pipeline
# ---------------------------------------------------------------------------


@dataclass
class _SeedContext:
    X: SnapshotMatrix
    grid: MaskedGrid | None
    mean: np.ndarray | None
    eval_values: np.ndarray  # measurement source (centered if requested)
    eval_original: np.ndarray  # error reference (never centered)
    basis: PodBasis
    noise: NoiseModel
    candidates: CandidateSet
    r2_full: int


def _prepare(cfg: ExperimentConfig, seed: int) -> _SeedContext:
    X, grid = cfg.dataset.load(seed)
    work = X.values
    mean = None
    if cfg.centering:
        mean = work.mean(axis=1)
        work = work - mean[:, None]
    if cfg.split is not None:
        m_train = math.ceil(cfg.split * X.m)
        if m_train < 1 or m_train >= X.m:
            raise InvalidConfigError(
                f"split={cfg.split} leaves no training or no held-out snapshots (m={X.m})"
            )
        train = work[:, :m_train]
        eval_values = work[:, m_train:]
        eval_original = X.values[:, m_train:]
    else:
        train = work
        eval_values = work
        eval_original = X.values
    basis = compute_pod(SnapshotMatrix(train))
    if cfg.r1 > basis.q:
        raise InvalidConfigError(f"r1={cfg.r1} exceeds q={basis.q} of the training data")
    r2_full = basis.q - cfg.r1
    noise = build_noise_model(basis, TruncationConfig(cfg.r1, r2_full))
    candidates = exclude_low_rms(train, cfg.exclusion_factor, min_survivors=cfg.r1)
    return _SeedContext(
        X=X,
        grid=grid,
        mean=mean,
        eval_values=eval_values,
        eval_original=eval_original,
        basis=basis,
        noise=noise,
        candidates=candidates,
        r2_full=r2_full,
    )


def _resolve_r2(cfg: ExperimentConfig, ctx: _SeedContext) -> int:
    r2 = ctx.r2_full if cfg.r2 is None else cfg.r2
    if r2 > ctx.r2_full:
        raise InvalidConfigError(f"r2={r2} exceeds available tail modes {ctx.r2_full}")
    return r2


def _run_selector(selector: str, ctx: _SeedContext, cfg: ExperimentConfig,
                  r2: int, p: int, seed: int) -> list[int]:
    if selector == "DG":
        return select_dg(ctx.basis, cfg.r1, p, ctx.candidates)
    if selector == "BDG":
        return select_bdg_fast(ctx.basis, ctx.noise, cfg.r1, r2, p, ctx.candidates)[0]
    if selector == "BDG-NAIVE":
        return select_bdg_naive(ctx.basis, ctx.noise.truncated(r2), cfg.r1, p, ctx.candidates)
    if selector == "RANDOM":
        return select_random(ctx.basis.n, p, seed * 1_000_003 + p, ctx.candidates)
    if selector == "BRUTE":
        return select_brute_force(ctx.basis, ctx.noise.truncated(r2), cfg.r1, p, ctx.candidates)
    raise InvalidConfigError(f"unknown selector {selector!r}")


def _estimate(estimator: str, ctx: _SeedContext, cfg: ExperimentConfig,
              indices, r2: int) -> tuple[float, float]:
    """Estimate every evaluation snapshot; returns (error_sum, error_mean)."""
    idx = np.asarray(indices, dtype=np.intp)
    Y = ctx.eval_values[idx, :]
    if estimator == "LSE":
        Z = lse(ctx.basis.U[idx, : cfg.r1], Y)
    else:
        setup = measurement_setup(ctx.basis, ctx.noise, idx, r2=r2)
        Z = map_estimate(setup, Y)
    Xhat = ctx.basis.U[:, : cfg.r1] @ Z
    if ctx.mean is not None:
        Xhat = Xhat + ctx.mean[:, None]
    err_sum = reconstruction_error(ctx.eval_original, Xhat)
    return err_sum, err_sum / ctx.eval_original.shape[1]


def _objective(ctx: _SeedContext, indices, r2: int) -> float:
    return objective_logdet(measurement_setup(ctx.basis, ctx.noise, np.asarray(indices), r2=r2))


def _with_context(exc: PodsenseError, method: str, p: int, seed: int) -> PodsenseError:
    exc.args = (f"{exc} [method={method}, p={p}, seed={seed}]",)
    return exc


def _sorted_records(records: list[SweepRecord]) -> list[SweepRecord]:
    return sorted(records, key=lambda r: (r.method, r.p, r.seed, r.r2))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def run_error_sweep(cfg: ExperimentConfig) -> SweepReport:
    """Reconstruction error of every (method, p, seed) combination.

    Selections are cached per (selector, r2, p) within a seed, so method
    pairs sharing a selector (e.g. DG-LSE and DG-BE) select once; both
    records then carry the same selection time.
    """
    cfg.validate()
    records: list[SweepRecord] = []
    excluded: dict[int, int] = {}
    grid = None
    for seed in cfg.seeds:
        ctx = _prepare(cfg, seed)
        excluded[seed] = ctx.basis.n - int(ctx.candidates.included.sum())
        grid = ctx.grid or grid
        r2 = _resolve_r2(cfg, ctx)
        cache: dict[tuple, tuple[list[int], float]] = {}
        for method in cfg.methods:
            selector, estimator = parse_method(method)
            for p in cfg.p_values:
                try:
                    key = (selector, r2, p)
                    if key not in cache:
                        t0 = time.perf_counter()
                        indices = _run_selector(selector, ctx, cfg, r2, p, seed)
                        cache[key] = (indices, time.perf_counter() - t0)
                    indices, select_time = cache[key]
                    t0 = time.perf_counter()
                    err_sum, err_mean = _estimate(estimator, ctx, cfg, indices, r2)
                    estimate_time = time.perf_counter() - t0
                    objective = _objective(ctx, indices, r2)
                except PodsenseError as exc:
                    raise _with_context(exc, method, p, seed)
                records.append(SweepRecord(
                    method=method, p=p, seed=seed, r2=r2,
                    error_sum=err_sum, error_mean=err_mean,
                    select_time=select_time, estimate_time=estimate_time,
                    objective=objective, indices=tuple(indices),
                ))
    return SweepReport(_sorted_records(records), cfg, grid, excluded)


def _timed_selection(selector: str, ctx: _SeedContext, cfg: ExperimentConfig,
                     r2: int, p: int, seed: int) -> tuple[list[int], float]:
    """Warm-up run (discarded) plus median wall time of the repetitions."""
    indices = _run_selector(selector, ctx, cfg, r2, p, seed)
    times = []
    for _ in range(cfg.timing_repeats):
        t0 = time.perf_counter()
        indices = _run_selector(selector, ctx, cfg, r2, p, seed)
        times.append(time.perf_counter() - t0)
    return indices, statistics.median(times)


def run_timing_sweep(cfg: ExperimentConfig) -> SweepReport:
    """Selection wall time per (method, p, seed); estimation is excluded.

    Each timing is the median of ``timing_repeats`` runs after one discarded
    warm-up.  Error fields are NaN in the emitted records.
    """
    cfg.validate()
    records: list[SweepRecord] = []
    excluded: dict[int, int] = {}
    grid = None
    for seed in cfg.seeds:
        ctx = _prepare(cfg, seed)
        excluded[seed] = ctx.basis.n - int(ctx.candidates.included.sum())
        grid = ctx.grid or grid
        r2 = _resolve_r2(cfg, ctx)
        cache: dict[tuple, tuple[list[int], float]] = {}
        for method in cfg.methods:
            selector, _ = parse_method(method)
            for p in cfg.p_values:
                try:
                    key = (selector, r2, p)
                    if key not in cache:
                        cache[key] = _timed_selection(selector, ctx, cfg, r2, p, seed)
                    indices, median_time = cache[key]
                    objective = _objective(ctx, indices, r2)
                except PodsenseError as exc:
                    raise _with_context(exc, method, p, seed)
                records.append(SweepRecord(
                    method=method, p=p, seed=seed, r2=r2,
                    error_sum=math.nan, error_mean=math.nan,
                    select_time=median_time, estimate_time=math.nan,
                    objective=objective, indices=tuple(indices),
                ))
    return SweepReport(_sorted_records(records), cfg, grid, excluded)


def run_r2_sweep(cfg: ExperimentConfig) -> SweepReport:
    """Error and selection time across tail ranks ``cfg.r2_values``.

    Selection timing follows the timing-sweep protocol (warm-up plus median
    of repetitions); estimation uses the same truncated covariance semantics
    as the selection it scores.
    """
    cfg.validate()
    if not cfg.r2_values:
        raise InvalidConfigError("run_r2_sweep needs r2_values")
    records: list[SweepRecord] = []
    excluded: dict[int, int] = {}
    grid = None
    for seed in cfg.seeds:
        ctx = _prepare(cfg, seed)
        excluded[seed] = ctx.basis.n - int(ctx.candidates.included.sum())
        grid = ctx.grid or grid
        for r2 in cfg.r2_values:
            if r2 > ctx.r2_full:
                raise InvalidConfigError(
                    f"r2={r2} exceeds available tail modes {ctx.r2_full}"
                )
            for method in cfg.methods:
                selector, estimator = parse_method(method)
                for p in cfg.p_values:
                    try:
                        indices, median_time = _timed_selection(selector, ctx, cfg, r2, p, seed)
                        t0 = time.perf_counter()
                        err_sum, err_mean = _estimate(estimator, ctx, cfg, indices, r2)
                        estimate_time = time.perf_counter() - t0
                        objective = _objective(ctx, indices, r2)
                    except PodsenseError as exc:
                        raise _with_context(exc, f"{method}@r2={r2}", p, seed)
                    records.append(SweepRecord(
                        method=method, p=p, seed=seed, r2=r2,
                        error_sum=err_sum, error_mean=err_mean,
                        select_time=median_time, estimate_time=estimate_time,
                        objective=objective, indices=tuple(indices),
                    ))
    return SweepReport(_sorted_records(records), cfg, grid, excluded)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.17g}"


def emit_report(report: SweepReport, out_dir) -> None:
    """Write ``records.csv``, per-method curve files, sensor lists, and a manifest.

    Layout::

        records.csv              one row per record (header documented in README)
        curves/<label>.dat       p vs errors/time, whitespace columns, gnuplot-ready
        sensors/<method>_p<p>.csv   seed,r2,order,index rows
        sensors/..._grid.csv     sensor indicator grids (masked datasets only)
        manifest.json            resolved config echo and versions
    """
    out = Path(out_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    (out / "sensors").mkdir(parents=True, exist_ok=True)

    with open(out / "records.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "method", "p", "seed", "r2", "error_sum", "error_mean",
            "select_time_s", "estimate_time_s", "objective_logdet",
            "selected_indices",
        ])
        for r in report.records:
            writer.writerow([
                r.method, r.p, r.seed, r.r2,
                _fmt(r.error_sum), _fmt(r.error_mean),
                _fmt(r.select_time), _fmt(r.estimate_time),
                _fmt(r.objective),
                ";".join(str(i) for i in r.indices),
            ])

    multi_r2 = len({r.r2 for r in report.records}) > 1
    groups: dict[str, list[SweepRecord]] = {}
    for r in report.records:
        label = f"{r.method}_r2{r.r2}" if multi_r2 else r.method
        groups.setdefault(label, []).append(r)
    for label, rows in sorted(groups.items()):
        with open(out / "curves" / f"{label}.dat", "w") as fh:
            fh.write("# p error_sum_mean error_mean_mean select_time_median\n")
            for p in sorted({r.p for r in rows}):
                at_p = [r for r in rows if r.p == p]
                fh.write(
                    f"{p} {_fmt(float(np.mean([r.error_sum for r in at_p])))} "
                    f"{_fmt(float(np.mean([r.error_mean for r in at_p])))} "
                    f"{_fmt(float(np.median([r.select_time for r in at_p])))}\n"
                )

    sensor_groups: dict[tuple[str, int], list[SweepRecord]] = {}
    for r in report.records:
        sensor_groups.setdefault((r.method, r.p), []).append(r)
    for (method, p), rows in sorted(sensor_groups.items()):
        with open(out / "sensors" / f"{method}_p{p}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "r2", "order", "index"])
            for r in sorted(rows, key=lambda r: (r.seed, r.r2)):
                for order, index in enumerate(r.indices):
                    writer.writerow([r.seed, r.r2, order, index])
        if report.grid is not None:
            for r in sorted(rows, key=lambda r: (r.seed, r.r2)):
                indicator = np.zeros(report.grid.n)
                indicator[list(r.indices)] = 1.0
                np.savetxt(
                    out / "sensors" / f"{method}_p{p}_seed{r.seed}_r2{r.r2}_grid.csv",
                    scatter_to_grid(report.grid, indicator),
                    fmt="%.1f",
                    delimiter=",",
                )

    manifest = {
        "config": report.config.describe(),
        "record_count": len(report.records),
        "excluded_points": {str(k): v for k, v in sorted(report.excluded_points.items())},
        "versions": _versions(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _versions() -> dict:
    import scipy

    try:
        from importlib.metadata import version

        own = version("podsense")
    except Exception:
        own = "unknown"
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "podsense": own,
    }
