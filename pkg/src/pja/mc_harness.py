"""Replicated Monte Carlo experiments and their CSV artifacts.

Replication ``i`` of case ``c`` draws from the stream ``(base_seed, c, i)``
so every output is a function of the configuration alone, whatever the
number of worker processes.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import stable_math as sm
from .activity import (EstimationError, FirstStep, WeightScheme, first_step_fixed_power,
                       two_step_point, two_step_weighted)
from .levy_sim import (CompoundPoissonJumps, ModelSpec, PathSeries, SampleGrid, StableJumps,
                       TemperedStableJumps, make_rng, pv_limit, simulate_increments)
from .power_variation import b_from_values, pv_table, scale_increments

CASES: dict[str, ModelSpec] = {
    "A": ModelSpec(sigma2=1.0, jumps=TemperedStableJumps(A=1.0, beta=1.5, lam=0.25)),
    "B": ModelSpec(sigma2=1.0, jumps=TemperedStableJumps(A=1.0, beta=1.75, lam=0.25)),
    "C": ModelSpec(sigma1_sq=0.8),
    "D": ModelSpec(sigma1_sq=0.8, sigma2=1.0, jumps=CompoundPoissonJumps(rate=0.3333, size=0.7746)),
}

FULL_SCALE_REPS = 10_000


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("PJA_WORKERS", "1"))
    return max(1, int(workers))


def standard_model(beta: float) -> ModelSpec:
    """Standard stable process (unit Pi), or standard Brownian motion at beta = 2."""
    if beta == 2.0:
        return ModelSpec(sigma1_sq=1.0)
    return ModelSpec(sigma2=1.0, jumps=StableJumps.standard(beta))


@dataclass(frozen=True)
class ExperimentConfig:
    case_id: str = "A"
    model: ModelSpec | None = None
    M: int = 390
    T: float = 22.0
    reps: int = 1000
    base_seed: int = 1
    fs_method: FirstStep = field(default_factory=FirstStep)
    weight_half_width: float | None = None  # None: point estimator; else uniform weight around tau
    conf_level: float = 0.95
    study_kind: str = "tables"

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.model is None and self.case_id not in CASES:
            raise ValueError(f"unknown case {self.case_id!r}; choose from {sorted(CASES)} or give a model")
        if self.study_kind not in ("tables", "rate_study", "cov_check", "curves"):
            raise ValueError(f"unknown study kind {self.study_kind!r}")
        self.grid  # validates the grid

    @property
    def resolved_model(self) -> ModelSpec:
        return self.model if self.model is not None else CASES[self.case_id]

    @property
    def grid(self) -> SampleGrid:
        return SampleGrid.from_daily(self.M, self.T)

    @property
    def beta_true(self) -> float:
        return self.resolved_model.activity

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.resolved_model.to_dict()
        d["fs_method"] = asdict(self.fs_method)
        return d


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    beta_fs: float
    b_low: float  # two-scale ratio at the fixed power 0.1
    tau_hat: float
    beta_ts: float
    avar_hat: float
    se_hat: float
    ci_lo: float
    ci_hi: float
    flagged: bool
    reason: str = ""


RECORD_FIELDS = [f.name for f in fields(ReplicationRecord)]


def replicate(config: ExperimentConfig, index: int) -> ReplicationRecord:
    """One replication: simulate a path and run both estimators on it."""
    grid = config.grid
    rng = make_rng(config.base_seed, config.case_id, index)
    path = PathSeries.from_increments(grid, simulate_increments(config.resolved_model, grid, rng))
    nan = math.nan
    try:
        b_low = first_step_fixed_power(path, 0.1)
    except EstimationError:
        b_low = nan
    try:
        if config.weight_half_width is None:
            est = two_step_point(path, config.fs_method, config.conf_level)
        else:
            scheme = WeightScheme.around_optimal(config.weight_half_width)
            est = two_step_weighted(path, scheme, config.fs_method, config.conf_level)
    except (EstimationError, sm.DomainError) as exc:
        return ReplicationRecord(index, nan, b_low, nan, nan, nan, nan, nan, nan, True, str(exc))
    return ReplicationRecord(index, est.beta_fs, b_low, est.tau_hat, est.beta_ts, est.avar_hat,
                             est.se_hat, est.ci[0], est.ci[1], False)


def _replicate_chunk(config: ExperimentConfig, indices: list[int]) -> list[ReplicationRecord]:
    return [replicate(config, i) for i in indices]


def run_case(config: ExperimentConfig, workers: int | None = None) -> list[ReplicationRecord]:
    """All replications of a configuration, ordered by replication index."""
    workers = resolve_workers(workers)
    indices = list(range(config.reps))
    if workers == 1 or config.reps == 1:
        return _replicate_chunk(config, indices)
    n_chunks = min(config.reps, 4 * workers)
    chunks = [indices[k::n_chunks] for k in range(n_chunks)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(_replicate_chunk, [config] * len(chunks), chunks)
        records = [r for part in parts for r in part]
    return sorted(records, key=lambda r: r.index)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Summary:
    median: float
    iqr: float
    mad: float
    n: int
    n_flagged: int = 0


def summarize(values, center: float | None = None) -> Summary:
    """Median, interquartile range and mean absolute deviation of the finite values.

    The deviation is taken about the median unless ``center`` is given.
    Percentiles interpolate linearly between order statistics.
    """
    x = np.asarray(values, dtype=float)
    ok = np.isfinite(x)
    x = x[ok]
    if x.size == 0:
        raise ValueError("no valid records to summarize")
    q25, med, q75 = np.percentile(x, [25, 50, 75])
    c = med if center is None else center
    return Summary(float(med), float(q75 - q25), float(np.mean(np.abs(x - c))), int(x.size), int((~ok).sum()))


@dataclass
class MCSummary:
    case_id: str
    beta_true: float
    estimators: dict[str, Summary]
    mad_about_true: dict[str, float]
    n_flagged: int
    flagged_fraction: float
    runtime_s: float = 0.0


def summarize_records(records: list[ReplicationRecord], case_id: str, beta_true: float,
                      runtime_s: float = 0.0) -> MCSummary:
    good = [r for r in records if not r.flagged]
    n_flag = len(records) - len(good)
    est, mad_true = {}, {}
    for name, attr in (("beta_ts", "beta_ts"), ("b_0.1", "b_low")):
        vals = np.array([getattr(r, attr) for r in good])
        est[name] = summarize(vals)
        mad_true[name] = summarize(vals, center=beta_true).mad
    return MCSummary(case_id, beta_true, est, mad_true, n_flag, n_flag / max(len(records), 1), runtime_s)


@dataclass(frozen=True)
class SEPrecisionRow:
    case_id: str
    exact_scaled_sd: float
    est_median: float
    est_iqr: float
    est_mad: float  # about the exact value

    @property
    def ratio(self) -> float:
        return self.est_median / self.exact_scaled_sd


def se_precision_row(records: list[ReplicationRecord], config: ExperimentConfig) -> SEPrecisionRow:
    """Exact finite-sample scaled sd of beta_ts against the per-replication estimate."""
    good = [r for r in records if not r.flagged]
    bt = np.array([r.beta_ts for r in good])
    exact = math.sqrt(config.T / config.grid.delta_n * np.var(bt, ddof=1)) if len(bt) > 1 else math.nan
    est = np.sqrt(config.T * np.array([r.avar_hat for r in good]))
    s = summarize(est, center=exact)
    return SEPrecisionRow(config.case_id, exact, s.median, s.iqr, s.mad)


def se_precision_study(config: ExperimentConfig, workers: int | None = None) -> SEPrecisionRow:
    return se_precision_row(run_case(config, workers), config)


def coverage(records: list[ReplicationRecord], beta_true: float) -> float:
    ok = [r for r in records if not r.flagged and math.isfinite(r.ci_lo)]
    return float(np.mean([r.ci_lo <= beta_true <= r.ci_hi for r in ok]))


def histogram(records: list[ReplicationRecord], bins: int = 50) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Common-bin histograms of the two estimators."""
    good = [r for r in records if not r.flagged]
    a = np.array([r.beta_ts for r in good])
    b = np.array([r.b_low for r in good])
    b = b[np.isfinite(b)]
    both = np.concatenate([a, b])
    edges = np.histogram_bin_edges(both, bins=bins)
    return edges, {"beta_ts": np.histogram(a, edges)[0], "b_0.1": np.histogram(b, edges)[0]}


# ---------------------------------------------------------------------------
# convergence, rate and covariance studies
# ---------------------------------------------------------------------------


def loglog_slope(delta: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of ``log(values)`` on ``log(delta)``."""
    return float(np.polyfit(np.log(delta), np.log(values), 1)[0])


@dataclass(frozen=True)
class ConvergenceRow:
    p: float
    delta_n: float
    mean_scaled: float
    sd_scaled: float
    limit: float
    mean_abs_err: float
    sd_b: float


def _study_path(model: ModelSpec, grid: SampleGrid, seed: int, label: str, index: int) -> PathSeries:
    rng = make_rng(seed, label, index)
    return PathSeries.from_increments(grid, simulate_increments(model, grid, rng))


def convergence_study(model: ModelSpec, p_grid, delta_grid, T: float = 22.0, reps: int = 100,
                      seed: int = 1) -> tuple[list[ConvergenceRow], dict[float, float]]:
    """Scaled power variation error and two-scale ratio spread across step sizes.

    Returns rows per ``(p, delta_n)`` and the fitted log-log slope of the
    Monte Carlo sd of ``b(p)`` against ``delta_n`` per power.
    """
    p_grid = [float(p) for p in p_grid]
    beta = model.activity
    rows = []
    for dn in delta_grid:
        grid = SampleGrid(T, float(dn))
        scaled = np.empty((reps, len(p_grid)))
        bvals = np.empty((reps, len(p_grid)))
        for i in range(reps):
            path = _study_path(model, grid, seed, f"conv-{dn:.12g}", i)
            tab = pv_table(path, p_grid)
            vf = dict(zip(tab.powers, tab.values_fine))
            vc = dict(zip(tab.powers, tab.values_coarse))
            for j, p in enumerate(p_grid):
                scaled[i, j] = grid.delta_n ** (1.0 - p / beta) * vf[p]
                bvals[i, j] = b_from_values(p, vf[p], vc[p])[0]
        for j, p in enumerate(p_grid):
            try:
                lim = pv_limit(model, p, T)
            except (sm.DomainError, ValueError):
                lim = math.nan
            rows.append(ConvergenceRow(p, float(dn), float(scaled[:, j].mean()), float(scaled[:, j].std(ddof=1)),
                                       lim, float(np.mean(np.abs(scaled[:, j] - lim))),
                                       float(np.nanstd(bvals[:, j], ddof=1))))
    slopes = {}
    for p in p_grid:
        sub = [r for r in rows if r.p == p]
        slopes[p] = loglog_slope(np.array([r.delta_n for r in sub]), np.array([r.sd_b for r in sub]))
    return rows, slopes


def rate_study(config: ExperimentConfig, M_levels=(390, 780, 1560), workers: int | None = None):
    """Monte Carlo sd of beta_ts at several sampling frequencies and its log-log slope."""
    sds = []
    for M in M_levels:
        recs = run_case(replace(config, M=int(M)), workers)
        bt = np.array([r.beta_ts for r in recs if not r.flagged])
        sds.append(float(np.std(bt, ddof=1)))
    delta = 1.0 / np.asarray(M_levels, dtype=float)
    return {"delta_n": delta.tolist(), "sd": sds, "slope": loglog_slope(delta, np.array(sds))}


@dataclass(frozen=True)
class CovCheck:
    beta: float
    p: float
    q: float
    empirical: np.ndarray
    theory: np.ndarray

    @property
    def rel_error(self) -> np.ndarray:
        return np.abs(self.empirical - self.theory) / np.abs(self.theory)


def cov_check(beta: float, p: float, q: float, reps: int = 2000, delta_n: float = 1.0 / 2000.0,
              T: float = 22.0, seed: int = 1) -> CovCheck:
    """Empirical covariance of the scaled (coarse, fine) power variations against the CLT."""
    model = standard_model(beta)
    theory = T * sm.clt_cov_matrix(p, q, beta)
    grid = SampleGrid(T, delta_n)
    stats = np.empty((reps, 4))  # coarse p, fine p, coarse q, fine q
    label = f"cov-{beta:.12g}-{p:.12g}-{q:.12g}"
    for i in range(reps):
        path = _study_path(model, grid, seed, label, i)
        af = np.abs(scale_increments(path, 1))
        ac = np.abs(scale_increments(path, 2))
        for k, (pw, a) in enumerate(((p, ac), (p, af), (q, ac), (q, af))):
            stats[i, k] = delta_n ** (1.0 - pw / beta) * np.sum(a**pw)
    stats /= math.sqrt(delta_n)
    c = np.cov(stats, rowvar=False)
    # rows: p-statistics (coarse, fine); columns: q-statistics (coarse, fine)
    emp = np.array([[c[0, 2], c[0, 3]], [c[1, 2], c[1, 3]]])
    return CovCheck(beta, p, q, emp, theory)


def lln_check(beta: float = 1.5, p: float = 0.6, reps: int = 100, delta_n: float = 1.0 / 2000.0,
              T: float = 22.0, seed: int = 1) -> tuple[float, float]:
    """Mean over paths of the scaled power variation and its limit."""
    model = standard_model(beta)
    grid = SampleGrid(T, delta_n)
    vals = []
    for i in range(reps):
        path = _study_path(model, grid, seed, f"lln-{beta:.12g}", i)
        vals.append(delta_n ** (1.0 - p / beta) * np.sum(np.abs(path.increments) ** p))
    return float(np.mean(vals)), pv_limit(model, p, T)


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.15g}"
    return str(v)


def write_csv(path, header: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_records(path, records: list[ReplicationRecord]) -> Path:
    return write_csv(path, RECORD_FIELDS, ([getattr(r, f) for f in RECORD_FIELDS] for r in records))


TABLE2_HEADER = ["case", "estimator", "beta_true", "median", "iqr", "mad", "n_flagged", "mad_about_true"]
TABLE3_HEADER = ["case", "exact_scaled_sd", "est_median", "est_iqr", "est_mad"]


def table2_rows(summaries: list[MCSummary]):
    for s in summaries:
        for name, st in s.estimators.items():
            yield [s.case_id, name, s.beta_true, st.median, st.iqr, st.mad, s.n_flagged, s.mad_about_true[name]]


def write_table2(path, summaries: list[MCSummary]) -> Path:
    """Medians, IQRs and mean absolute deviations (about the median; also about beta)."""
    return write_csv(path, TABLE2_HEADER, table2_rows(summaries))


def write_table3(path, rows: list[SEPrecisionRow]) -> Path:
    """Exact scaled sd and the distribution of its estimate (deviation about the exact value)."""
    return write_csv(path, TABLE3_HEADER,
                     ([r.case_id, r.exact_scaled_sd, r.est_median, r.est_iqr, r.est_mad] for r in rows))


def write_histogram(path, records: list[ReplicationRecord], bins: int = 50) -> Path:
    edges, counts = histogram(records, bins)
    return write_csv(path, ["bin_lo", "bin_hi", "count_beta_ts", "count_b_0.1"],
                     zip(edges[:-1], edges[1:], counts["beta_ts"], counts["b_0.1"]))


def curve_emit(beta_grid, p_grid, out_dir) -> tuple[Path, Path]:
    """Write the sd surface ``sqrt(K_pp(beta))`` and the optimal-power curve."""
    out_dir = Path(out_dir)
    surface = []
    for b in beta_grid:
        b = float(b)
        ps = np.array([p for p in p_grid if 0 < p < b / 2.0 or (b == 2.0 and 0 < p <= 1.0)], dtype=float)
        if ps.size:
            for p, k in zip(ps, sm.k_diagonal(ps, b)):
                surface.append([b, p, math.sqrt(k)])
    pstar = []
    for b in beta_grid:
        r = sm.search_optimal_power(float(b))
        pstar.append([float(b), r.p, math.sqrt(r.k_value), r.clamped])
    a = write_csv(out_dir / "curves_k.csv", ["beta", "p", "sqrt_k"], surface)
    c = write_csv(out_dir / "curve_pstar.csv", ["beta", "p_star", "sqrt_k_min", "clamped"], pstar)
    return a, c


@dataclass
class TablesResult:
    summaries: list[MCSummary]
    se_rows: list[SEPrecisionRow]
    records: dict[str, list[ReplicationRecord]]


def run_tables(case_ids, reps: int = 1000, base_seed: int = 1, M: int = 390, T: float = 22.0,
               workers: int | None = None, out_dir=None, bins: int = 50, **options) -> TablesResult:
    """Both estimator tables from one run per case; writes CSVs when ``out_dir`` is given."""
    summaries, se_rows, all_records = [], [], {}
    for cid in case_ids:
        cfg = ExperimentConfig(case_id=cid, M=M, T=T, reps=reps, base_seed=base_seed, **options)
        t0 = time.perf_counter()
        recs = run_case(cfg, workers)
        summaries.append(summarize_records(recs, cid, cfg.beta_true, time.perf_counter() - t0))
        se_rows.append(se_precision_row(recs, cfg))
        all_records[cid] = recs
        if out_dir is not None:
            write_histogram(Path(out_dir) / f"histogram_{cid}.csv", recs, bins)
    if out_dir is not None:
        write_table2(Path(out_dir) / "table2.csv", summaries)
        write_table3(Path(out_dir) / "table3.csv", se_rows)
    return TablesResult(summaries, se_rows, all_records)
