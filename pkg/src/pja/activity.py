"""First-step and adaptive two-step estimators of the jump activity index."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from . import stable_math as sm
from .levy_sim import PathSeries
from .power_variation import LN2, PVTable, b_from_values, pv_table, truncated_count

BETA_FS_RANGE = (0.2, 2.0)
GAUSS_SWITCH = 1.9  # above this a first-stage estimate is treated as Brownian
TAU_MARGIN = 0.01
TAU_MIN = 0.05
N_QUAD = 32


class EstimationError(RuntimeError):
    """The data do not identify an estimate (zero or degenerate statistics)."""


def effective_beta(beta: float) -> float:
    """Clamp to ``[0.2, 2]`` and switch to the Gaussian branch above 1.9."""
    b = min(max(float(beta), BETA_FS_RANGE[0]), BETA_FS_RANGE[1])
    return 2.0 if b > GAUSS_SWITCH else b


# ---------------------------------------------------------------------------
# first step
# ---------------------------------------------------------------------------


def first_step_fixed_power(path: PathSeries, p0: float = 0.1) -> float:
    """Two-scale ratio at a small fixed power."""
    if not (0 < p0 < 1):
        raise ValueError("p0 must lie in (0, 1)")
    table = pv_table(path, [p0])
    b, ok = b_from_values(p0, table.values_fine[0], table.values_coarse[0])
    if not ok:
        raise EstimationError("degenerate power variation ratio at the first step")
    return b


def truncated_estimate(count_fine: float, count_coarse: float) -> float:
    """``(2 / ln 2) (ln count_fine - ln count_coarse)``."""
    if count_fine <= 0 or count_coarse <= 0:
        raise EstimationError("no increments above the truncation level at one of the scales")
    return 2.0 / LN2 * (math.log(count_fine) - math.log(count_coarse))


def first_step_truncated(path: PathSeries, alpha: float) -> float:
    """Activity from counts of large increments at the two frequencies."""
    return truncated_estimate(truncated_count(path, alpha, 1), truncated_count(path, alpha, 2))


@dataclass(frozen=True)
class FirstStep:
    """First-step estimator choice: ``fixed_power`` (at p0) or ``truncated`` (at alpha)."""

    kind: str = "fixed_power"
    p0: float = 0.1
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed_power", "truncated"):
            raise ValueError(f"unknown first-step method {self.kind!r}")

    def __call__(self, path: PathSeries) -> float:
        if self.kind == "fixed_power":
            return first_step_fixed_power(path, self.p0)
        return first_step_truncated(path, self.alpha)


FsMethod = Callable[[PathSeries], float]


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


@dataclass
class ActivityEstimate:
    beta_fs: float
    tau_hat: float
    beta_ts: float
    avar_hat: float
    se_hat: float
    ci: tuple[float, float]
    flags: dict = field(default_factory=dict)
    tau_avar: float = math.nan  # power at which the variance estimate is evaluated

    def to_dict(self) -> dict:
        return {
            "beta_fs": self.beta_fs,
            "tau_hat": self.tau_hat,
            "beta_ts": self.beta_ts,
            "avar_hat": self.avar_hat,
            "se_hat": self.se_hat,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "tau_avar": self.tau_avar,
            "flags": dict(self.flags),
        }


def select_power(beta_fs: float) -> tuple[float, bool]:
    """Second-step power from a first-step estimate; returns ``(tau, clamped)``."""
    b = min(max(beta_fs, BETA_FS_RANGE[0]), BETA_FS_RANGE[1])
    tau = sm.optimal_power(effective_beta(b))
    hi = b / 2.0 - TAU_MARGIN
    clamped = False
    if tau > hi:
        tau, clamped = hi, True
    if tau < TAU_MIN:
        tau, clamped = TAU_MIN, True
    return tau, clamped


def feasible_avar(table: PVTable, beta_ts: float, tau: float) -> float:
    """Plug-in estimate of the asymptotic variance of ``dn**-1/2 (beta_ts - beta)``.

    ``K(b) mu_tau**2 / mu_2tau * V(2 tau) / V(tau)**2 / dn`` with ``b`` the
    effective index of ``beta_ts``; equals ``K / T`` when the power
    variations sit at their limits for a unit-scale Levy process.
    """
    beta = effective_beta(beta_ts)
    if beta < 2.0 and 2.0 * tau >= beta:
        raise sm.DomainError(f"2*tau = {2 * tau} must be below the activity estimate {beta}")
    v_tau, _ = table.lookup(tau)
    v_2tau, _ = table.lookup(2.0 * tau)
    if not (v_tau > 0 and v_2tau > 0):
        raise EstimationError("power variations vanish; variance not identified")
    k = float(sm.k_diagonal(tau, beta)[0])
    m1, m2 = sm.mu_p(tau, beta), sm.mu_p(2.0 * tau, beta)
    return k * m1**2 / m2 * v_2tau / v_tau**2 / table.grid.delta_n


def _interval(beta_ts: float, avar: float, dn: float, conf_level: float):
    if not math.isfinite(avar):
        return math.nan, (math.nan, math.nan)
    se = math.sqrt(dn * avar)
    z = norm.ppf(0.5 + 0.5 * conf_level)
    return se, (beta_ts - z * se, beta_ts + z * se)


def _first_step(path: PathSeries, fs_method: FsMethod | None) -> float:
    fs = fs_method if fs_method is not None else FirstStep()
    try:
        b = fs(path)
    except ValueError as exc:  # degenerate inputs inside the first step
        raise EstimationError(str(exc)) from exc
    if not math.isfinite(b):
        raise EstimationError("first-step estimate is not finite")
    return b


def two_step_point(path: PathSeries, fs_method: FsMethod | None = None, conf_level: float = 0.95) -> ActivityEstimate:
    """Two-scale ratio at the variance-minimising power for a first-step estimate."""
    beta_fs = _first_step(path, fs_method)
    flags = {}
    b_used = min(max(beta_fs, BETA_FS_RANGE[0]), BETA_FS_RANGE[1])
    if b_used != beta_fs:
        flags["beta_fs_clamped"] = True
    tau, clamped = select_power(beta_fs)
    if clamped:
        flags["tau_clamped"] = True
    table = pv_table(path, [tau])
    b, ok = b_from_values(tau, *table.lookup(tau))
    if not ok:
        raise EstimationError("degenerate power variation ratio at the second step")
    # the variance is evaluated at the power selected by the final estimate
    tau_v, _ = select_power(b)
    try:
        avar = feasible_avar(pv_table(path, [tau_v, 2.0 * tau_v]), b, tau_v)
    except sm.DomainError:
        avar = math.nan
        flags["avar_domain"] = True
    se, ci = _interval(b, avar, path.grid.delta_n, conf_level)
    return ActivityEstimate(beta_fs, tau, b, avar, se, ci, flags, tau_v)


@dataclass(frozen=True)
class WeightScheme:
    """Weight over second-step powers: point mass at tau(beta) or uniform on [low(beta), high(beta)]."""

    kind: str = "dirac"
    f_low: Callable[[float], float] | None = None
    f_high: Callable[[float], float] | None = None

    @classmethod
    def dirac(cls) -> "WeightScheme":
        return cls("dirac")

    @classmethod
    def uniform(cls, f_low, f_high) -> "WeightScheme":
        return cls("uniform", f_low, f_high)

    @classmethod
    def around_optimal(cls, half_width: float) -> "WeightScheme":
        """Uniform weight on ``[tau - h, tau + h]`` around the selected power.

        The band is cut at the same upper margin as the point power, so a
        clamped ``tau`` keeps the band on the admissible side.
        """
        def high(b):
            cap = effective_beta(b) / 2.0 - TAU_MARGIN if effective_beta(b) < 2.0 else 1.0
            return min(select_power(b)[0] + half_width, cap)

        return cls.uniform(lambda b: max(select_power(b)[0] - half_width, TAU_MIN / 2.0), high)

    def interval(self, beta_fs: float) -> tuple[float, float]:
        lo, hi = float(self.f_low(beta_fs)), float(self.f_high(beta_fs))
        b = effective_beta(beta_fs)
        if not (0 < lo < hi < b / 2.0 or (b == 2.0 and 0 < lo < hi <= 1.0)):
            raise sm.DomainError(f"weight interval [{lo}, {hi}] not inside (0, {b / 2})")
        return lo, hi

    def nodes(self, beta_fs: float) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and normalised weights (summing to 1)."""
        lo, hi = self.interval(beta_fs)
        x, w = np.polynomial.legendre.leggauss(N_QUAD)
        return 0.5 * (lo + hi) + 0.5 * (hi - lo) * x, 0.5 * w


def weighted_avar(path: PathSeries, beta_ts: float, u: np.ndarray, w: np.ndarray) -> float:
    """Plug-in variance of a weighted two-scale ratio with nodes u and weights w.

    Generalises :func:`feasible_avar` to ``sum_jk w_j w_k K(u_j, u_k)`` with
    the volatility factor estimated from ``V(u_j + u_k) / (V(u_j) V(u_k))``.
    """
    beta = effective_beta(beta_ts)
    if beta < 2.0 and 2.0 * u.max() >= beta:
        raise sm.DomainError("weight range reaches half the activity estimate")
    pair_sums = (u[:, None] + u[None, :]).ravel()
    table = pv_table(path, np.concatenate([u, pair_sums]))
    vf = np.array([table.lookup(x)[0] for x in u])
    v_sum = np.array([table.lookup(x)[0] for x in pair_sums]).reshape(len(u), len(u))
    if np.any(vf <= 0):
        raise EstimationError("power variations vanish; variance not identified")
    kmat = sm.k_matrix(u, beta)
    mu = np.array([sm.mu_p(x, beta) for x in u])
    mu_sum = np.vectorize(lambda x: sm.mu_p(x, beta))(u[:, None] + u[None, :])
    ratio = np.outer(mu, mu) / mu_sum * v_sum / np.outer(vf, vf) / path.grid.delta_n
    return float(w @ (kmat * ratio) @ w)


def two_step_weighted(path: PathSeries, scheme: WeightScheme, fs_method: FsMethod | None = None,
                      conf_level: float = 0.95) -> ActivityEstimate:
    """Weighted average of the two-scale ratio over an estimated range of powers."""
    if scheme.kind == "dirac":
        return two_step_point(path, fs_method, conf_level)
    if scheme.kind != "uniform":
        raise ValueError(f"unknown weight scheme {scheme.kind!r}")
    beta_fs = _first_step(path, fs_method)
    flags = {"weight": "uniform"}
    u, w = scheme.nodes(beta_fs)
    table = pv_table(path, u)
    bs = [b_from_values(x, *table.lookup(x)) for x in u]
    if not all(ok for _, ok in bs):
        raise EstimationError("degenerate power variation ratio inside the weight range")
    b = float(np.dot(w, [v for v, _ in bs]))
    try:
        u_v, w_v = scheme.nodes(b)
        avar = weighted_avar(path, b, u_v, w_v)
    except sm.DomainError:
        avar = math.nan
        flags["avar_domain"] = True
    se, ci = _interval(b, avar, path.grid.delta_n, conf_level)
    return ActivityEstimate(beta_fs, float(0.5 * (u[0] + u[-1])), b, avar, se, ci, flags)
