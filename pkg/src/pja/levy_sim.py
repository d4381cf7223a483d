"""Discretely sampled paths of Brownian, stable, tempered stable and
compound Poisson driven processes.

The simulated model is ``X = sigma1 W + sigma2 * J`` with J a symmetric
pure-jump Levy process and W a standard Brownian motion, optionally with a
step-function jump scale ``sigma2(t)``. Units are days.
"""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.special import gamma

from .stable_math import mu_p, pi_const, stable_sample

BINARY_MAGIC = b"PJA1"
TAIL_MASS_LIMIT = 1e-6  # largest mass left to the Pareto tails


class ModelError(ValueError):
    """Unsupported or inconsistent model / grid specification."""


# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------


def key_of(label: str | int) -> int:
    """Stable 32-bit key for a string label (e.g. a case id)."""
    if isinstance(label, int):
        return label
    return zlib.crc32(label.encode("utf-8"))


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Counter-based stream for ``(seed, *keys)``.

    Streams for different keys are independent and do not depend on the
    order in which they are created, so replications can run on any number
    of workers.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [key_of(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


# ---------------------------------------------------------------------------
# grid and model description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleGrid:
    T: float
    delta_n: float

    def __post_init__(self):
        if not (self.T > 0 and self.delta_n > 0):
            raise ModelError("grid needs T > 0 and delta_n > 0")
        n = self.n_steps
        if n < 2:
            raise ModelError(f"grid has {n} steps; at least 2 are needed")
        if n % 2:
            raise ModelError(f"grid has an odd number of steps ({n}); two-scale statistics need an even count")

    @classmethod
    def from_daily(cls, M: int, T: float) -> "SampleGrid":
        """M observations per day over T days."""
        return cls(float(T), 1.0 / M)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.delta_n + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.delta_n


@dataclass(frozen=True)
class StableJumps:
    """Symmetric stable jumps with Levy density ``A / |x|**(1+beta)``."""

    beta: float
    A: float

    @classmethod
    def standard(cls, beta: float) -> "StableJumps":
        """Jumps whose unit-time increment is the standard stable law."""
        return cls(beta, 1.0 / pi_const(1.0, beta).value)

    @property
    def pi(self) -> float:
        return pi_const(self.A, self.beta).value


@dataclass(frozen=True)
class TemperedStableJumps:
    """Symmetric tempered stable jumps, density ``A exp(-lam |x|) / |x|**(1+beta)``."""

    A: float
    beta: float
    lam: float

    @property
    def pi(self) -> float:
        return pi_const(self.A, self.beta).value


@dataclass(frozen=True)
class CompoundPoissonJumps:
    """Jumps of size +r or -r (fair coin) arriving at total rate ``rate``."""

    rate: float
    size: float


JumpSpec = Union[StableJumps, TemperedStableJumps, CompoundPoissonJumps, None]


@dataclass(frozen=True)
class VolPath:
    """Right-continuous step function: ``levels[i]`` on ``[breaks[i-1], breaks[i])``."""

    breaks: tuple[float, ...]
    levels: tuple[float, ...]

    def __post_init__(self):
        if len(self.levels) != len(self.breaks) + 1:
            raise ModelError("VolPath needs len(levels) == len(breaks) + 1")
        if any(b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise ModelError("VolPath breakpoints must be increasing")
        if min(self.levels) <= 0:
            raise ModelError("VolPath levels must be bounded away from zero")

    @classmethod
    def constant(cls, level: float) -> "VolPath":
        return cls((), (float(level),))

    def on_grid(self, grid: SampleGrid) -> np.ndarray:
        """Level for each grid step; breakpoints must fall on grid times."""
        idx = []
        for b in self.breaks:
            k = b / grid.delta_n
            if abs(k - round(k)) > 1e-8:
                raise ModelError(f"volatility breakpoint {b} is not on the sampling grid")
            idx.append(int(round(k)))
        out = np.empty(grid.n_steps)
        edges = [0] + [min(max(i, 0), grid.n_steps) for i in idx] + [grid.n_steps]
        for lvl, a, b in zip(self.levels, edges[:-1], edges[1:]):
            out[a:b] = lvl
        return out

    def integral_abs_power(self, p: float, T: float) -> float:
        """``int_0^T |sigma(s)|**p ds``."""
        edges = [0.0] + [min(max(b, 0.0), T) for b in self.breaks] + [T]
        return float(sum(abs(lvl) ** p * (b - a) for lvl, a, b in zip(self.levels, edges[:-1], edges[1:])))


@dataclass(frozen=True)
class ModelSpec:
    sigma1_sq: float = 0.0
    sigma2: float = 0.0
    jumps: JumpSpec = None
    drift: float = 0.0
    vol_path: VolPath | None = None

    def __post_init__(self):
        if self.sigma1_sq < 0 or self.sigma2 < 0:
            raise ModelError("sigma1_sq and sigma2 must be nonnegative")
        has_jumps = self.jumps is not None and (self.sigma2 > 0 or self.vol_path is not None)
        if not (self.sigma1_sq > 0 or has_jumps):
            raise ModelError("model needs a Brownian part or a nontrivial jump part")
        j = self.jumps
        if isinstance(j, TemperedStableJumps):
            if not (0 < j.beta < 2):
                raise ModelError("tempered stable needs 0 < beta < 2")
            if j.beta == 1.0:
                raise ModelError("tempered stable with beta = 1 is not supported")
            if j.lam < 0 or j.A <= 0:
                raise ModelError("tempered stable needs lam >= 0 and A > 0")
        elif isinstance(j, StableJumps):
            if not (0 < j.beta < 2) or j.A <= 0:
                raise ModelError("stable jumps need 0 < beta < 2 and A > 0")
        elif isinstance(j, CompoundPoissonJumps):
            if j.rate <= 0 or j.size <= 0:
                raise ModelError("compound Poisson needs rate > 0 and size > 0")

    @property
    def activity(self) -> float:
        """Activity level: 2 with a Brownian part, otherwise the jump index."""
        if self.sigma1_sq > 0:
            return 2.0
        if isinstance(self.jumps, (StableJumps, TemperedStableJumps)):
            return self.jumps.beta
        return 0.0

    def to_dict(self) -> dict:
        d = {"sigma1_sq": self.sigma1_sq, "sigma2": self.sigma2, "drift": self.drift}
        j = self.jumps
        if j is None:
            d["jump_kind"] = "none"
        elif isinstance(j, StableJumps):
            d.update(jump_kind="stable", A=j.A, beta=j.beta)
        elif isinstance(j, TemperedStableJumps):
            d.update(jump_kind="tempered_stable", A=j.A, beta=j.beta, lam=j.lam)
        else:
            d.update(jump_kind="compound_poisson", lambda_c=j.rate, r=j.size)
        if self.vol_path is not None:
            d["vol_path"] = {"breaks": list(self.vol_path.breaks), "levels": list(self.vol_path.levels)}
        return d


def pv_limit(model: ModelSpec, p: float, T: float) -> float:
    """Probability limit of ``delta_n**(1 - p/activity) * V_T(p, X, delta_n)``.

    Defined for a Brownian part (any ``0 < p < 2``) or stable-like jumps
    alone (``0 < p < beta``).
    """
    if model.sigma1_sq > 0:
        return T * model.sigma1_sq ** (p / 2.0) * mu_p(p, 2.0)
    j = model.jumps
    if not isinstance(j, (StableJumps, TemperedStableJumps)):
        raise ModelError("power variation limit needs a Brownian or stable-like component")
    scale = model.vol_path.integral_abs_power(p, T) if model.vol_path else T * model.sigma2**p
    return j.pi ** (p / j.beta) * mu_p(p, j.beta) * scale


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass
class PathSeries:
    grid: SampleGrid
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1,):
            raise ModelError(f"path has {len(self.values)} values, grid needs {self.grid.n_steps + 1}")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("path values must be finite")

    @classmethod
    def from_increments(cls, grid: SampleGrid, increments, seed=None) -> "PathSeries":
        values = np.concatenate([[0.0], np.cumsum(increments)])
        return cls(grid, values, seed)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def scaled(self, c: float) -> "PathSeries":
        return PathSeries(self.grid, c * self.values, self.seed)

    def to_csv(self, path) -> None:
        t = self.grid.times
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t,x\n")
            for ti, xi in zip(t, self.values):
                fh.write(f"{ti:.15g},{xi:.15g}\n")

    def to_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<Qdd", len(self.values), self.grid.T, self.grid.delta_n))
            fh.write(self.values.astype("<f8").tobytes())


def read_path(path) -> PathSeries:
    """Read a path written by :meth:`PathSeries.to_csv` or :meth:`PathSeries.to_binary`."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BINARY_MAGIC:
        raw = path.read_bytes()
        n, T, dn = struct.unpack("<Qdd", raw[4:28])
        values = np.frombuffer(raw[28:28 + 8 * n], dtype="<f8").astype(float)
        return PathSeries(SampleGrid(T, dn), values)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, x = data[:, 0], data[:, 1]
    if len(t) < 3:
        raise ModelError("path file needs at least 3 observations")
    dn = (t[-1] - t[0]) / (len(t) - 1)
    return PathSeries(SampleGrid(dn * (len(t) - 1), dn), x)


# ---------------------------------------------------------------------------
# tempered stable characteristic function and CF-inversion sampler
# ---------------------------------------------------------------------------


def tempered_stable_cf(A: float, beta: float, lam: float, t: float) -> Callable:
    """Characteristic function of the symmetric tempered stable law at time t.

    ``u -> exp(t A Gamma(-beta) [(lam - iu)**beta + (lam + iu)**beta - 2 lam**beta])``
    """
    if not (0 < beta < 2) or beta == 1.0:
        raise ModelError("tempered stable characteristic function needs 0 < beta < 2, beta != 1")
    if lam <= 0 or A <= 0 or t <= 0:
        raise ModelError("tempered stable characteristic function needs lam > 0, A > 0, t > 0")
    g = gamma(-beta)
    lam_b = lam**beta

    def cf(u):
        u = np.asarray(u, dtype=float)
        # (lam - iu)^b + (lam + iu)^b = 2 (lam^2 + u^2)^(b/2) cos(b atan(u / lam))
        re = (lam * lam + u * u) ** (beta / 2.0) * np.cos(beta * np.arctan2(u, lam))
        return np.exp(2.0 * t * A * g * (re - lam_b))

    return cf


@dataclass
class IncrementSampler:
    """Inverse-CDF sampler tabulated from a symmetric characteristic function."""

    x: np.ndarray
    cdf: np.ndarray
    step: float
    tail_alpha: float
    diagnostics: dict = field(default_factory=dict)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = rng.random(n)
        out = np.interp(u, self.cdf, self.x)
        lo_f, hi_f = self.cdf[0], self.cdf[-1]
        left = u < lo_f
        if left.any():
            out[left] = self.x[0] * (lo_f / np.maximum(u[left], 1e-300)) ** (1.0 / self.tail_alpha)
        right = u > hi_f
        if right.any():
            out[right] = self.x[-1] * ((1.0 - hi_f) / np.maximum(1.0 - u[right], 1e-300)) ** (1.0 / self.tail_alpha)
        return out

    def table_cf(self, u) -> np.ndarray:
        """Characteristic function of the tabulated (piecewise uniform) law."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        mass = np.diff(self.cdf)
        mid = 0.5 * (self.x[1:] + self.x[:-1])
        dx = np.diff(self.x)
        out = np.empty(len(u))
        for i, ui in enumerate(u):
            out[i] = np.sum(mass * np.cos(ui * mid) * np.sinc(ui * dx / (2.0 * np.pi)))
        return out


def _scale_of(cf) -> float:
    target = math.exp(-1.0)
    u = 1.0
    while cf(u) > target:
        u *= 2.0
    while cf(u) < target:
        u /= 2.0
    lo, hi = u, 2.0 * u
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if cf(mid) > target:
            lo = mid
        else:
            hi = mid
    return 1.0 / lo


def build_increment_sampler(cf, delta_n: float, tol: float = 1e-8, n_min: int = 2**16,
                            n_max: int = 2**22, points_per_scale: int = 128) -> IncrementSampler:
    """Tabulate the inverse CDF of a symmetric law given its characteristic function.

    The CDF is computed directly on an FFT grid from
    ``F(x) = 1/2 + (1/2pi) int sin(ux) cf(u) / u du``; the grid spacing
    resolves the law's scale (``|cf(1/s)| = e**-1``) with
    ``points_per_scale`` points and the grid is widened until the mass
    outside its central half is below ``tol``. Only the central half is
    kept (the outer half absorbs periodisation error); the remaining tail
    mass is sampled from Pareto tails.
    """
    if not (1e-10 < tol < 1e-3):
        raise ModelError("sampler tolerance must lie in (1e-10, 1e-3)")
    cf_real = lambda u: float(np.real(cf(np.asarray(u, dtype=float))))
    scale = _scale_of(cf_real)
    u_cut = 1.0 / scale
    while cf_real(u_cut) > 1e-17:
        u_cut *= 1.25
    dx = min(math.pi / u_cut, scale / points_per_scale)
    n = n_min
    while True:
        du = 2.0 * math.pi / (n * dx)
        j = np.arange(n // 2 + 1)
        uj = j * du
        phi = np.real(cf(uj))
        x = (np.arange(n) - n // 2) * dx
        coef = np.zeros(n, dtype=complex)
        # x_k = (k - n/2) dx  =>  exp(i u_j x_k) = exp(2 pi i j k / n) (-1)**j
        coef[1:n // 2 + 1] = phi[1:] / uj[1:] * (-1.0) ** j[1:]
        s = np.fft.ifft(coef) * n
        cdf = 0.5 + du / (2.0 * math.pi) * (x + 2.0 * s.imag)
        quarter = n // 4
        outside = cdf[quarter] + 1.0 - cdf[3 * quarter]
        if outside < tol:
            break
        if n >= n_max:
            if outside < TAIL_MASS_LIMIT:
                break  # heavy tails: the remainder goes to the Pareto extrapolation
            raise ModelError("increment law too heavy-tailed for the FFT grid")
        n *= 2
    x = x[quarter:3 * quarter + 1]
    cdf = cdf[quarter:3 * quarter + 1]
    raw_mass = np.diff(cdf)
    clipped = float(-raw_mass[raw_mass < 0].sum())
    if clipped > tol:
        raise ModelError(f"recovered density has negative mass {clipped:.3g} > tol; grid too coarse")
    cdf = np.maximum.accumulate(cdf)
    cdf = np.clip(cdf, 0.0, 1.0)
    # Pareto tail index from the tail CDF between x0/2 and x0
    half = len(x) // 4
    f_out, f_in = cdf[0], cdf[half]
    if f_out > 0 and f_in > f_out:
        alpha = math.log(f_in / f_out) / math.log(abs(x[0]) / abs(x[half]))
    else:
        alpha = 20.0
    alpha = float(min(max(alpha, 0.5), 20.0))
    sampler = IncrementSampler(x, cdf, delta_n, alpha)
    u_check = np.linspace(0.05, 5.0, 64) / scale
    cf_err = float(np.max(np.abs(sampler.table_cf(u_check) - np.real(cf(u_check)))))
    sampler.diagnostics = {
        "n_fft": n,
        "dx": dx,
        "scale": scale,
        "clipped_mass": clipped,
        "tail_mass": float(cdf[0] + 1.0 - cdf[-1]),
        "cf_match_error": cf_err,
    }
    return sampler


_SAMPLER_CACHE: dict = {}


def tempered_stable_sampler(jumps: TemperedStableJumps, delta_n: float, tol: float = 1e-8) -> IncrementSampler:
    """Cached sampler for one tempered stable increment over ``delta_n``."""
    key = (jumps.A, jumps.beta, jumps.lam, float(delta_n), tol)
    s = _SAMPLER_CACHE.get(key)
    if s is None:
        cf = tempered_stable_cf(jumps.A, jumps.beta, jumps.lam, delta_n)
        s = build_increment_sampler(cf, delta_n, tol)
        _SAMPLER_CACHE[key] = s
    return s


# ---------------------------------------------------------------------------
# increment simulation
# ---------------------------------------------------------------------------


def compound_poisson_increments(rate: float, size: float, grid: SampleGrid, rng: np.random.Generator) -> np.ndarray:
    """Per-step sums of +/-size jumps arriving at total rate ``rate``."""
    if rate <= 0 or size <= 0:
        raise ModelError("compound Poisson needs rate > 0 and size > 0")
    counts = rng.poisson(rate * grid.delta_n, grid.n_steps)
    ups = rng.binomial(counts, 0.5)
    return size * (2.0 * ups - counts)


def jump_increments(jumps: JumpSpec, grid: SampleGrid, rng: np.random.Generator) -> np.ndarray:
    """Unit-scale jump increments over each grid step."""
    n, dn = grid.n_steps, grid.delta_n
    if jumps is None:
        return np.zeros(n)
    if isinstance(jumps, StableJumps):
        return (jumps.pi * dn) ** (1.0 / jumps.beta) * stable_sample(jumps.beta, n, rng)
    if isinstance(jumps, TemperedStableJumps):
        if jumps.lam == 0:
            return (jumps.pi * dn) ** (1.0 / jumps.beta) * stable_sample(jumps.beta, n, rng)
        return tempered_stable_sampler(jumps, dn).sample(n, rng)
    if isinstance(jumps, CompoundPoissonJumps):
        return compound_poisson_increments(jumps.rate, jumps.size, grid, rng)
    raise ModelError(f"unknown jump specification {jumps!r}")


def simulate_increments(model: ModelSpec, grid: SampleGrid, rng: np.random.Generator) -> np.ndarray:
    """Increments of X over each grid step; Brownian draws come first from ``rng``."""
    n, dn = grid.n_steps, grid.delta_n
    inc = np.zeros(n)
    if model.sigma1_sq > 0:
        inc += math.sqrt(model.sigma1_sq * dn) * rng.standard_normal(n)
    if model.jumps is not None:
        if model.vol_path is not None:
            inc += model.vol_path.on_grid(grid) * jump_increments(model.jumps, grid, rng)
        elif model.sigma2 > 0:
            inc += model.sigma2 * jump_increments(model.jumps, grid, rng)
    if model.drift:
        inc += model.drift * dn
    return inc


def simulate_path(model: ModelSpec, grid: SampleGrid, seed: int) -> PathSeries:
    """Simulate ``X_0 = 0, X_dn, ..., X_{n dn}``; deterministic given seed."""
    if model.vol_path is not None:
        return simulate_piecewise_vol(model, grid, seed)
    rng = make_rng(seed)
    return PathSeries.from_increments(grid, simulate_increments(model, grid, rng), seed)


def simulate_piecewise_vol(model: ModelSpec, grid: SampleGrid, seed: int) -> PathSeries:
    """Simulate with a step-function jump scale; breakpoints must lie on the grid."""
    if model.vol_path is None:
        raise ModelError("simulate_piecewise_vol needs a vol_path")
    model.vol_path.on_grid(grid)
    rng = make_rng(seed)
    return PathSeries.from_increments(grid, simulate_increments(model, grid, rng), seed)
