"""Functionals of standard symmetric stable laws.

Conventions: for ``beta < 2`` the standard law has characteristic function
``exp(-|u|**beta)``; for ``beta == 2`` it is the standard normal N(0, 1).

Absolute moments use the Gamma-function closed form. Cross moments
``E|Z1|**p |Z1 + Z2|**q`` have no closed form and are evaluated by a
deterministic double integral over characteristic functions (see
:func:`cross_covariance`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import gamma

LN2 = math.log(2.0)

#: search interval bounds for the variance-minimising power
P_SEARCH_LOW = 0.05
P_SEARCH_MARGIN = 0.01
P_SEARCH_HIGH_GAUSS = 1.0


class DomainError(ValueError):
    """Raised when a functional is requested outside its domain."""


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not (0.0 < beta <= 2.0):
        raise DomainError(f"beta must lie in (0, 2], got {beta}")
    return beta


def _char_coef(beta: float) -> float:
    # standard normal at beta = 2 has cf exp(-u**2 / 2)
    return 0.5 if beta == 2.0 else 1.0


# ---------------------------------------------------------------------------
# absolute moments
# ---------------------------------------------------------------------------


def mu_p(p: float, beta: float) -> float:
    """Absolute moment ``E|Z|**p`` of the standard symmetric stable law.

    Raises
    ------
    DomainError
        If ``p <= 0`` or ``p >= beta`` for ``beta < 2`` (infinite moment).
    """
    beta = _check_beta(beta)
    p = float(p)
    if p <= 0.0:
        raise DomainError(f"power p must be positive, got {p}")
    if beta == 2.0:
        return 2.0 ** (p / 2.0) * gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)
    if p >= beta:
        raise DomainError(f"E|Z|^p is infinite for p={p} >= beta={beta}")
    return float(
        2.0**p
        * gamma((p + 1.0) / 2.0)
        * gamma(1.0 - p / beta)
        / (math.sqrt(math.pi) * gamma(1.0 - p / 2.0))
    )


def _fourier_weight(p):
    """``1 / int_0^inf (1 - cos y) y**(-1-p) dy`` for ``0 < p < 2``."""
    return 2.0 * gamma(p + 1.0) * np.sin(np.pi * p / 2.0) / np.pi


# ---------------------------------------------------------------------------
# Pi constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiConstant:
    A: float
    beta: float
    value: float


def _cos_integral_closed(beta: float) -> float:
    # int_0^inf (1 - cos x) / x**(beta+1) dx, via the reflection formula;
    # free of the removable singularity at beta = 1
    return math.pi / (2.0 * gamma(beta + 1.0) * math.sin(math.pi * beta / 2.0))


def _cos_integral_quad(beta: float) -> float:
    # 1 - cos x = 2 sin^2(x/2) avoids cancellation near 0
    head, _ = integrate.quad(lambda x: 2.0 * math.sin(0.5 * x) ** 2 * x ** (-beta - 1.0), 0.0, 1.0,
                             epsabs=1e-14, epsrel=1e-12, limit=200)
    osc, _ = integrate.quad(lambda x: x ** (-beta - 1.0), 1.0, np.inf, weight="cos", wvar=1.0)
    return head + 1.0 / beta - osc


@lru_cache(maxsize=256)
def _cos_integral(beta: float) -> float:
    closed = _cos_integral_closed(beta)
    try:
        quad = _cos_integral_quad(beta)
    except Exception:  # pragma: no cover - quadrature failure is not expected
        return closed
    if abs(quad - closed) > 1e-8 * max(1.0, abs(closed)):
        return quad
    return closed


def pi_const(A: float, beta: float) -> PiConstant:
    """Scale constant ``2 A int_0^inf (1 - cos x) x**(-beta-1) dx``.

    A stable process with Levy density ``A / |x|**(1+beta)`` has
    characteristic exponent ``-Pi |u|**beta``; the standard law has Pi = 1.
    """
    beta = float(beta)
    if not (0.0 < beta < 2.0):
        raise DomainError(f"Pi constant needs 0 < beta < 2, got {beta}")
    if A <= 0:
        raise DomainError(f"A must be positive, got {A}")
    return PiConstant(float(A), beta, float(2.0 * float(A) * _cos_integral(beta)))


def levy_coefficient_for_unit_pi(beta: float) -> float:
    """Coefficient A giving the standard stable law (Pi = 1)."""
    return 1.0 / pi_const(1.0, beta).value


# ---------------------------------------------------------------------------
# cross moments
# ---------------------------------------------------------------------------


def _tanh_sinh_unit(h: float, kmax: float, floor: float = 1e-100):
    """Tanh-sinh nodes on (0, 1) with the distance to 1 kept exactly."""
    t = np.arange(-kmax, kmax + h / 2.0, h)
    u = 0.5 * np.pi * np.sinh(t)
    e = np.exp(-2.0 * np.abs(u))
    near = e / (1.0 + e)
    x = np.where(u < 0, near, 1.0 - near)
    xc = np.where(u < 0, 1.0 - near, near)
    with np.errstate(over="ignore"):
        w = h * 0.25 * np.pi * np.cosh(t) / np.cosh(u) ** 2
    keep = (x > floor) & (xc > floor)
    return x[keep], xc[keep], w[keep]


def _even_excess(y, beta):
    """``(1+y)**beta + (1-y)**beta - 2`` without cancellation for small y."""
    with np.errstate(divide="ignore"):
        direct = np.expm1(beta * np.log1p(y)) + np.expm1(beta * np.log1p(-y))
    series = np.zeros_like(y)
    coef = 1.0
    y2 = y * y
    yk = np.ones_like(y)
    for k in range(1, 9):
        coef = coef * (beta - 2 * k + 2) * (beta - 2 * k + 1) / ((2 * k - 1) * (2 * k))
        yk = yk * y2
        series = series + coef * yk
    return np.where(y < 0.1, 2.0 * series, direct)


def _cos_covariance(s, t, beta, c):
    """``cov(cos(s Z1), cos(t (Z1 + Z2)))`` for s, t > 0, evaluated stably."""
    big = np.maximum(s, t)
    small = np.minimum(s, t)
    y = small / big
    with np.errstate(divide="ignore"):
        odd = np.expm1(beta * np.log1p(y)) - np.expm1(beta * np.log1p(-y))
    big_b = big**beta
    m = 0.5 * c * big_b * _even_excess(y, beta)
    d = 0.5 * c * big_b * odd
    bracket = np.expm1(-m) + np.exp(-m) * 2.0 * np.sinh(0.5 * d) ** 2 - np.expm1(-c * small**beta)
    pref = np.where(t >= s, np.exp(-2.0 * c * big_b), np.exp(-c * big_b - c * small**beta))
    return pref * bracket


def _cos_covariance_leading(s, t, beta, c):
    """Degree-beta homogeneous leading term of :func:`_cos_covariance` at the origin."""
    big = np.maximum(s, t)
    small = np.minimum(s, t)
    y = small / big
    return c * (small**beta - 0.5 * big**beta * _even_excess(y, beta))


@dataclass(frozen=True)
class _CrossGrid:
    beta: float
    w: np.ndarray  # angular coordinate s / (s + t)
    wc: np.ndarray  # 1 - w
    ww: np.ndarray
    log_rho: np.ndarray
    rho_w: np.ndarray
    rho0: float
    cov: np.ndarray  # shape (n_rho, n_w)
    corner: np.ndarray  # leading term at rho = 1 along each w


#: node configuration of the cross-moment integral (validated in the test suite)
CROSS_CONFIG = dict(h=1.0 / 8.0, kmax=6.0, gl=8, panels_per_unit=1)


@lru_cache(maxsize=64)
def _cross_grid(beta: float, h: float, kmax: float, gl: int, panels_per_unit: int) -> _CrossGrid:
    c = _char_coef(beta)
    x, xc, wx = _tanh_sinh_unit(h, kmax)
    # split the angle at 1/2 where |s - t|**beta has a kink
    w = np.concatenate([0.5 * x, 0.5 + 0.5 * x])
    wc = np.concatenate([1.0 - 0.5 * x, 0.5 * xc])
    ww = np.concatenate([0.5 * wx, 0.5 * wx])
    rho0 = min(1e-8, 1e-16 ** (1.0 / beta))
    rho_max = 2.0 * (60.0 / c) ** (1.0 / beta)
    lo, hi = math.log(rho0), math.log(rho_max)
    n_pan = max(1, int(math.ceil((hi - lo) * panels_per_unit)))
    g, gw = np.polynomial.legendre.leggauss(gl)
    edges = np.linspace(lo, hi, n_pan + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    log_rho = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    rho_w = (half[:, None] * gw[None, :]).ravel()
    rho = np.exp(log_rho)
    cov = _cos_covariance(rho[:, None] * w[None, :], rho[:, None] * wc[None, :], beta, c)
    if beta == 2.0:
        corner = np.zeros_like(w)
    else:
        corner = _cos_covariance_leading(w, wc, beta, c)
    return _CrossGrid(beta, w, wc, ww, log_rho, rho_w, rho0, cov, corner)


def cross_covariance(p, q, beta: float):
    """``cov(|Z1|**p, |Z1 + Z2|**q)`` for independent standard stable Z1, Z2.

    Uses ``|x|**p = C_p int_0^inf (1 - cos(s x)) s**(-1-p) ds`` twice, which
    turns the covariance into a double integral of the covariance of two
    cosines, a closed-form function of the characteristic function. The
    double integral is taken in polar-like coordinates ``(rho, w)`` with
    ``s = rho w``, ``t = rho (1 - w)``: tanh-sinh in ``w``, composite
    Gauss-Legendre in ``log rho``, and the region ``rho < rho0`` integrated
    analytically from the homogeneous leading term.

    ``p`` and ``q`` may be arrays of equal shape.
    """
    beta = _check_beta(beta)
    p_arr = np.asarray(p, dtype=float)
    q_arr = np.asarray(q, dtype=float)
    p_arr, q_arr = np.broadcast_arrays(p_arr, q_arr)
    if np.any(p_arr <= 0) or np.any(q_arr <= 0):
        raise DomainError("cross moment powers must be positive")
    if beta < 2.0 and np.any(p_arr + q_arr >= beta):
        raise DomainError(f"cross moment infinite: p + q must be < beta={beta}")
    if beta == 2.0 and (np.any(p_arr >= 2.0) or np.any(q_arr >= 2.0)):
        raise DomainError("Gaussian cross moments are supported for powers below 2")
    grid = _cross_grid(beta, **CROSS_CONFIG)
    pf = p_arr.ravel()
    qf = q_arr.ravel()
    # (n_pairs, n_rho) @ (n_rho, n_w)
    radial = np.exp(-(pf + qf)[:, None] * grid.log_rho[None, :]) * grid.rho_w[None, :]
    inner = radial @ grid.cov
    if beta < 2.0:
        a = beta - pf - qf
        inner = inner + grid.corner[None, :] * (grid.rho0 ** a / a)[:, None]
    ang = np.exp(-(1.0 + pf)[:, None] * np.log(grid.w)[None, :]
                 - (1.0 + qf)[:, None] * np.log(grid.wc)[None, :]) * grid.ww[None, :]
    total = (inner * ang).sum(axis=1) * _fourier_weight(pf) * _fourier_weight(qf)
    out = total.reshape(p_arr.shape)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=65536)
def _mu_pq_cached(p: float, q: float, beta: float) -> float:
    return 2.0 ** (q / beta) * mu_p(p, beta) * mu_p(q, beta) + cross_covariance(p, q, beta)


def mu_pq(p: float, q: float, beta: float) -> float:
    """Cross moment ``E|Z1|**p |Z1 + Z2|**q`` of independent standard stable laws.

    Results are memoised per argument triple.
    """
    beta = _check_beta(beta)
    if p <= 0 or q <= 0:
        raise DomainError("cross moment powers must be positive")
    if beta < 2.0 and p + q >= beta:
        raise DomainError(f"cross moment infinite: p + q = {p + q} >= beta = {beta}")
    return _mu_pq_cached(float(p), float(q), beta)


# ---------------------------------------------------------------------------
# CLT covariance and the K kernel
# ---------------------------------------------------------------------------


def clt_cov_matrix(p: float, q: float, beta: float) -> np.ndarray:
    """Per-unit-time covariance of the (coarse, fine) scaled power variations.

    Entry ``[i, j]`` is the covariance between component ``i`` at power p
    and component ``j`` at power q, for ``T = 1`` and unit Pi (unit sigma
    in the Gaussian case). Component 0 is the ``2 * delta_n`` statistic,
    component 1 the ``delta_n`` statistic.
    """
    beta = _check_beta(beta)
    if beta < 2.0 and p + q >= beta:
        raise DomainError(f"covariance needs p + q < beta, got p + q = {p + q}")
    mp, mq, mpq = mu_p(p, beta), mu_p(q, beta), mu_p(p + q, beta)
    return np.array(
        [
            [2.0 ** ((p + q) / beta - 1.0) * (mpq - mp * mq), cross_covariance(q, p, beta)],
            [cross_covariance(p, q, beta), mpq - mp * mq],
        ]
    )


def _check_kernel_domain(p, q, beta):
    upper = beta / 2.0
    if not (0.0 < p < upper or (beta == 2.0 and 0.0 < p <= upper)):
        raise DomainError(f"kernel power p={p} outside (0, beta/2) for beta={beta}")
    if not (0.0 < q < upper or (beta == 2.0 and 0.0 < q <= upper)):
        raise DomainError(f"kernel power q={q} outside (0, beta/2) for beta={beta}")


def k_kernel(p: float, q: float, beta: float) -> float:
    """Asymptotic covariance of the centred two-scale ratio at powers p and q.

    Equals the delta-method variance ``g_p' Sigma(p, q) g_q`` of
    ``sqrt(T/delta_n) (b(p) - beta)``; see :func:`clt_cov_matrix`.
    """
    beta = _check_beta(beta)
    p, q = float(p), float(q)
    _check_kernel_domain(p, q, beta)
    mp, mq = mu_p(p, beta), mu_p(q, beta)
    cpq = cross_covariance(p, q, beta)
    cqp = cross_covariance(q, p, beta)
    bracket = (3.0 * (mu_p(p + q, beta) - mp * mq)
               - (2.0 ** (1.0 - p / beta) * cqp + 2.0 ** (1.0 - q / beta) * cpq))
    return beta**4 / (LN2**2 * (p * q) * (mp * mq)) * bracket


def k_diagonal(p, beta: float) -> np.ndarray:
    """Vectorised ``K_{p,p}(beta)`` over an array of powers."""
    beta = _check_beta(beta)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    for pi in p:
        _check_kernel_domain(pi, pi, beta)
    mp = np.array([mu_p(x, beta) for x in p])
    m2p = np.array([mu_p(2 * x, beta) for x in p])
    cov = cross_covariance(p, p, beta)
    bracket = 3.0 * (m2p - mp**2) - 2.0 * 2.0 ** (1.0 - p / beta) * cov
    return beta**4 / (LN2**2 * p**2 * mp**2) * bracket


def k_matrix(powers, beta: float) -> np.ndarray:
    """``K_{p_i,p_j}(beta)`` for all pairs of an array of powers."""
    beta = _check_beta(beta)
    p = np.atleast_1d(np.asarray(powers, dtype=float))
    for pi in p:
        _check_kernel_domain(pi, pi, beta)
    P, Q = np.meshgrid(p, p, indexing="ij")
    mp = np.array([mu_p(x, beta) for x in p])
    mpq_sum = np.vectorize(lambda x: mu_p(x, beta))(P + Q)
    cov_pq = cross_covariance(P, Q, beta)  # cov(|Z1|^p, |Z1+Z2|^q)
    bracket = (3.0 * (mpq_sum - np.outer(mp, mp))
               - (2.0 ** (1.0 - P / beta) * cov_pq.T + 2.0 ** (1.0 - Q / beta) * cov_pq))
    return beta**4 / (LN2**2 * np.outer(p, p) * np.outer(mp, mp)) * bracket


# ---------------------------------------------------------------------------
# optimal power
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerSearch:
    beta: float
    p: float
    k_value: float
    clamped: bool  # raised to the admissibility lower bound


def admissible_lower_bound(beta: float) -> float | None:
    """Lower power bound required for the CLT with a drift, or None below sqrt(2)."""
    if beta <= math.sqrt(2.0) or beta >= 2.0:
        return None
    return max((2.0 - beta) / (2.0 * (beta - 1.0)), (beta - 1.0) / 2.0)


def search_interval(beta: float) -> tuple[float, float]:
    beta = _check_beta(beta)
    if beta == 2.0:
        return P_SEARCH_LOW, P_SEARCH_HIGH_GAUSS
    hi = beta / 2.0 - P_SEARCH_MARGIN
    if hi <= P_SEARCH_LOW:
        raise DomainError(f"no admissible power search interval for beta={beta}")
    return P_SEARCH_LOW, hi


@lru_cache(maxsize=4096)
def _search(beta: float) -> PowerSearch:
    lo, hi = search_interval(beta)
    grid = np.linspace(lo, hi, 200)
    kv = k_diagonal(grid, beta)
    i = int(np.argmin(kv))
    if 0 < i < len(grid) - 1:
        res = optimize.minimize_scalar(
            lambda x: float(k_diagonal(x, beta)[0]),
            bracket=(grid[i - 1], grid[i], grid[i + 1]),
            method="golden",
            tol=1e-4,
        )
        p_star = float(res.x)
    else:
        p_star = float(grid[i])
    clamped = False
    bound = admissible_lower_bound(beta)
    if bound is not None and p_star < bound:
        p_star = min(bound, hi)
        clamped = True
    return PowerSearch(beta, p_star, float(k_diagonal(p_star, beta)[0]), clamped)


def search_optimal_power(beta: float) -> PowerSearch:
    """Minimise ``K_{p,p}(beta)`` over the clamped search interval."""
    return _search(_check_beta(beta))


def optimal_power(beta: float) -> float:
    """Power minimising the asymptotic variance of the two-scale ratio."""
    return search_optimal_power(beta).p


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def stable_sample(beta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n standard symmetric stable variates (Chambers-Mallows-Stuck)."""
    beta = _check_beta(beta)
    if beta == 2.0:
        return rng.standard_normal(n)
    v = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, n)
    if beta == 1.0:
        return np.tan(v)
    w = rng.standard_exponential(n)
    return np.sin(beta * v) / np.cos(v) ** (1.0 / beta) * (np.cos((1.0 - beta) * v) / w) ** ((1.0 - beta) / beta)
