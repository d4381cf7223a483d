"""Realized power variation at two sampling frequencies and the activity ratio."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .levy_sim import PathSeries, SampleGrid

LN2 = math.log(2.0)
DEGENERATE_TOL = 1e-12


def scale_increments(path: PathSeries, scale: int) -> np.ndarray:
    """Increments over ``scale`` grid steps, starting at X_0.

    The coarse scale uses X_0, X_2dn, X_4dn, ...; a trailing odd fine
    increment is dropped.
    """
    if scale == 1:
        return np.diff(path.values)
    if scale == 2:
        v = path.values
        m = (len(v) - 1) // 2
        return v[2:2 * m + 1:2] - v[0:2 * m - 1:2]
    raise ValueError(f"scale must be 1 or 2, got {scale}")


def _abs_power_sums(absinc: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """``sum_i |x_i|**p`` for each p; zero increments contribute nothing."""
    nz = absinc[absinc > 0]
    if nz.size == 0:
        return np.zeros(len(powers))
    logs = np.log(nz)
    return np.array([np.exp(p * logs).sum() for p in powers])


def realized_pv(path: PathSeries, p: float, scale: int = 1) -> float:
    """Sum of ``|increment|**p`` over the fine (1) or coarse (2) scale."""
    if p <= 0:
        raise ValueError("power must be positive")
    inc = np.abs(scale_increments(path, scale))
    return float(_abs_power_sums(inc, np.array([float(p)]))[0])


def realized_pv_dp(path: PathSeries, p: float, scale: int = 1) -> float:
    """Derivative in p of :func:`realized_pv`: ``sum |x|**p log|x|`` over nonzero x."""
    inc = np.abs(scale_increments(path, scale))
    nz = inc[inc > 0]
    logs = np.log(nz)
    return float(np.sum(np.exp(p * logs) * logs))


@dataclass(frozen=True)
class PVTable:
    powers: np.ndarray
    values_fine: np.ndarray
    values_coarse: np.ndarray
    grid: SampleGrid

    def lookup(self, p: float) -> tuple[float, float]:
        idx = np.flatnonzero(self.powers == p)
        if idx.size == 0:
            raise KeyError(f"power {p} not in table")
        i = idx[0]
        return float(self.values_fine[i]), float(self.values_coarse[i])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("p,v_fine,v_coarse\n")
            for p, vf, vc in zip(self.powers, self.values_fine, self.values_coarse):
                fh.write(f"{p:.15g},{vf:.15g},{vc:.15g}\n")


def pv_table(path: PathSeries, powers) -> PVTable:
    """Power variations at both scales for many powers from one pass over the data."""
    powers = np.unique(np.asarray(powers, dtype=float))
    if powers.size == 0 or np.any(powers <= 0):
        raise ValueError("powers must be nonempty and positive")
    fine = _abs_power_sums(np.abs(scale_increments(path, 1)), powers)
    coarse = _abs_power_sums(np.abs(scale_increments(path, 2)), powers)
    return PVTable(powers, fine, coarse, path.grid)


@dataclass(frozen=True)
class BFunction:
    powers: np.ndarray
    b_values: np.ndarray
    valid: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("p,b,valid\n")
            for p, b, ok in zip(self.powers, self.b_values, self.valid):
                fh.write(f"{p:.15g},{b:.15g},{int(ok)}\n")


def b_from_values(p: float, v_fine: float, v_coarse: float) -> tuple[float, bool]:
    """Activity ratio from the two power variations; returns ``(b, valid)``."""
    if not (v_fine > 0 and v_coarse > 0):
        return math.nan, False
    denom = LN2 + math.log(v_coarse) - math.log(v_fine)
    if abs(denom) < DEGENERATE_TOL or not math.isfinite(denom):
        return math.nan, False
    return LN2 * p / denom, True


def b_ratio(table: PVTable, p: float) -> tuple[float, bool]:
    """``ln2 * p / (ln2 + ln V(p, 2dn) - ln V(p, dn))``, flagged when degenerate."""
    return b_from_values(p, *table.lookup(p))


def b_function(table: PVTable) -> BFunction:
    out = [b_from_values(p, vf, vc) for p, vf, vc in zip(table.powers, table.values_fine, table.values_coarse)]
    return BFunction(table.powers.copy(), np.array([b for b, _ in out]), np.array([ok for _, ok in out]))


def truncated_count(path: PathSeries, alpha: float, scale: int = 1) -> int:
    """Number of increments with ``|x| >= alpha * sqrt(scale * dn)``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    inc = scale_increments(path, scale)
    thr = alpha * math.sqrt(scale * path.grid.delta_n)
    return int(np.count_nonzero(np.abs(inc) >= thr))
