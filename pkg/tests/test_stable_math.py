import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import gamma

from pja import stable_math as sm


# ---------------------------------------------------------------------------
# absolute moments
# ---------------------------------------------------------------------------


def test_mu_p_gaussian_closed_values():
    assert sm.mu_p(1.0, 2.0) == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-12)
    assert sm.mu_p(2.0, 2.0) == pytest.approx(1.0, abs=1e-14)
    assert sm.mu_p(4.0, 2.0) == pytest.approx(3.0, rel=1e-13)


@pytest.mark.parametrize("beta", [0.7, 1.0, 1.5, 1.9])
@pytest.mark.parametrize("frac", [0.1, 0.3, 0.45])
def test_mu_p_matches_density_quadrature(beta, frac):
    # independent route: integrate |x|^p against scipy's stable density
    p = frac * beta
    dens = stats.levy_stable(beta, 0.0)
    val = 2 * integrate.quad(lambda x: x**p * dens.pdf(x), 0, np.inf, limit=400)[0]
    assert sm.mu_p(p, beta) == pytest.approx(val, rel=2e-5)


def test_mu_p_cauchy_closed_form():
    # E|C|^p = 1 / cos(pi p / 2) for the standard Cauchy law
    for p in (0.2, 0.5, 0.8):
        assert sm.mu_p(p, 1.0) == pytest.approx(1.0 / math.cos(math.pi * p / 2), rel=1e-12)


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5, 2.0])
def test_mu_p_small_power_limit(beta):
    assert sm.mu_p(1e-8, beta) == pytest.approx(1.0, abs=1e-6)


def test_mu_p_domain():
    with pytest.raises(sm.DomainError):
        sm.mu_p(1.5, 1.5)
    with pytest.raises(sm.DomainError):
        sm.mu_p(-0.1, 1.5)
    with pytest.raises(sm.DomainError):
        sm.mu_p(0.5, 2.5)


@given(st.floats(0.3, 1.99), st.floats(0.05, 0.9))
def test_mu_p_log_convex_in_p(beta, frac):
    # Lyapunov: log E|Z|^p is convex in p
    p = frac * beta * 0.9
    h = 0.01 * p
    f = lambda x: math.log(sm.mu_p(x, beta))
    assert f(p - h) + f(p + h) - 2 * f(p) >= -1e-10


def test_stable_sample_moments(rng):
    x = sm.stable_sample(1.5, 400_000, rng)
    for p in (0.3, 0.6):
        v = np.abs(x) ** p
        assert abs(v.mean() - sm.mu_p(p, 1.5)) < 4 * v.std() / math.sqrt(len(v))


def test_stable_sample_characteristic_function(rng):
    for beta in (0.8, 1.0, 1.5):
        x = sm.stable_sample(beta, 200_000, rng)
        for u in (0.5, 1.0, 2.0):
            assert abs(np.cos(u * x).mean() - math.exp(-u**beta)) < 4 / math.sqrt(len(x))


# ---------------------------------------------------------------------------
# scale constant
# ---------------------------------------------------------------------------


def test_pi_const_known_values():
    assert sm.pi_const(1.0, 1.0).value == pytest.approx(math.pi, rel=1e-12)
    assert sm.pi_const(2.0, 1.5).value == pytest.approx(2 * sm.pi_const(1.0, 1.5).value, rel=1e-14)


@pytest.mark.parametrize("beta", [0.3, 0.9, 1.2, 1.7, 1.95])
def test_pi_const_against_direct_quadrature(beta):
    f = lambda x: 2 * math.sin(x / 2) ** 2 * x ** (-beta - 1)
    head = integrate.quad(f, 0, 1, limit=200)[0]
    tail = 1 / beta - integrate.quad(lambda x: x ** (-beta - 1), 1, np.inf, weight="cos", wvar=1.0)[0]
    assert sm.pi_const(1.0, beta).value == pytest.approx(2 * (head + tail), rel=1e-8)


def test_unit_pi_coefficient_gives_standard_law(rng):
    beta = 1.5
    A = sm.levy_coefficient_for_unit_pi(beta)
    assert sm.pi_const(A, beta).value == pytest.approx(1.0, rel=1e-13)


def test_pi_const_domain():
    for bad in ((1.0, 0.0), (1.0, 2.0), (0.0, 1.0), (-1.0, 1.5)):
        with pytest.raises(sm.DomainError):
            sm.pi_const(*bad)


# ---------------------------------------------------------------------------
# cross moments
# ---------------------------------------------------------------------------


def test_mu_pq_gaussian_exact():
    # Z1, Z1 + Z2 jointly normal with correlation 1/sqrt(2): E|X||Y| closed form
    rho = 1 / math.sqrt(2)
    exact = math.sqrt(2) * 2 / math.pi * (math.sqrt(1 - rho**2) + rho * math.asin(rho))
    assert sm.mu_pq(1.0, 1.0, 2.0) == pytest.approx(exact, rel=1e-9)


def test_mu_pq_gaussian_against_2d_quadrature():
    p, q = 0.4, 0.9
    f = lambda y, x: abs(x) ** p * abs(x + y) ** q * math.exp(-(x * x + y * y) / 2) / (2 * math.pi)
    val = integrate.dblquad(f, -12, 12, -12, 12, epsabs=1e-10)[0]
    assert sm.mu_pq(p, q, 2.0) == pytest.approx(val, rel=1e-6)


@pytest.mark.parametrize("p,q", [(0.3, 0.5), (0.6, 0.6), (0.2, 0.9)])
def test_mu_pq_stable_against_monte_carlo(p, q):
    beta = 1.5
    rng = np.random.default_rng(7)
    z1 = sm.stable_sample(beta, 2_000_000, rng)
    z2 = sm.stable_sample(beta, 2_000_000, rng)
    v = np.abs(z1) ** p * np.abs(z1 + z2) ** q
    se = v.std() / math.sqrt(len(v))
    assert abs(v.mean() - sm.mu_pq(p, q, beta)) < 4 * se


def test_mu_pq_independent_limit_and_symmetry_structure():
    # cov(|Z1|^p, |Z1+Z2|^q) is positive for the stable laws considered here
    for beta in (1.2, 1.6, 2.0):
        c = sm.cross_covariance(0.3, 0.4, beta)
        assert c > 0


def test_cross_covariance_node_refinement():
    # result is converged: refining the quadrature changes nothing visible
    beta = 1.5
    base = sm.cross_covariance(0.5, 0.6, beta)
    fine_cfg = dict(h=1 / 16, kmax=6.5, gl=12, panels_per_unit=2)
    old = dict(sm.CROSS_CONFIG)
    try:
        sm.CROSS_CONFIG.update(fine_cfg)
        fine = sm.cross_covariance(0.5, 0.6, beta)
    finally:
        sm.CROSS_CONFIG.clear()
        sm.CROSS_CONFIG.update(old)
    assert base == pytest.approx(fine, rel=1e-8)


def test_mu_pq_domain():
    with pytest.raises(sm.DomainError):
        sm.mu_pq(0.8, 0.8, 1.5)
    with pytest.raises(sm.DomainError):
        sm.mu_pq(0.0, 0.3, 1.5)


# ---------------------------------------------------------------------------
# CLT covariance and kernel
# ---------------------------------------------------------------------------


def _b_gradient(p, beta):
    """Numerical gradient of b(coarse, fine) at the scaled limits."""
    mp = sm.mu_p(p, beta)
    xc, xf = 2 ** (p / beta - 1) * mp, mp
    b = lambda c, f: p * math.log(2) / (math.log(2) + math.log(c) - math.log(f))
    hc, hf = 1e-6 * xc, 1e-6 * xf
    return np.array([(b(xc + hc, xf) - b(xc - hc, xf)) / (2 * hc),
                     (b(xc, xf + hf) - b(xc, xf - hf)) / (2 * hf)])


@pytest.mark.parametrize("beta,p,q", [(1.5, 0.6, 0.6), (1.5, 0.3, 0.6), (1.8, 0.2, 0.8), (2.0, 0.2, 0.9), (2.0, 1.0, 1.0)])
def test_kernel_equals_delta_method(beta, p, q):
    # independent route: finite-difference gradient of b times the CLT covariance
    k_delta = _b_gradient(p, beta) @ sm.clt_cov_matrix(p, q, beta) @ _b_gradient(q, beta)
    assert sm.k_kernel(p, q, beta) == pytest.approx(k_delta, rel=1e-4)


def test_clt_cov_matrix_gaussian_closed_form():
    c = sm.clt_cov_matrix(1.0, 1.0, 2.0)
    assert c[1, 1] == pytest.approx(1 - 2 / math.pi, rel=1e-12)
    assert c[0, 0] == pytest.approx(1 - 2 / math.pi, rel=1e-12)
    assert c[0, 1] == pytest.approx(c[1, 0], rel=1e-12)


def test_kernel_gaussian_value():
    assert math.sqrt(sm.k_kernel(1.0, 1.0, 2.0)) == pytest.approx(4.6971470156, rel=1e-8)


def test_kernel_symmetric_and_diagonal_consistent():
    for beta in (1.3, 1.7, 2.0):
        ps = np.array([0.15, 0.3, 0.55]) * min(beta, 1.9) / 1.9
        m = sm.k_matrix(ps, beta)
        assert np.allclose(m, m.T, rtol=1e-12)
        assert np.allclose(np.diag(m), sm.k_diagonal(ps, beta), rtol=1e-12)
        for i, a in enumerate(ps):
            for j, b in enumerate(ps):
                assert m[i, j] == pytest.approx(sm.k_kernel(a, b, beta), rel=1e-12)


def test_kernel_matrix_positive_semidefinite():
    m = sm.k_matrix(np.linspace(0.2, 0.7, 12), 1.5)
    assert np.linalg.eigvalsh(m).min() > -1e-8 * np.abs(m).max()


def test_kernel_against_monte_carlo_off_diagonal():
    # n cov(b(p), b(q)) for Brownian motion at a fine grid; the off-diagonal
    # entry is sensitive to the index order of the cross moments
    beta, p, q = 2.0, 0.2, 0.9
    rng = np.random.default_rng(3)
    n, reps = 4000, 3000
    bp, bq = np.empty(reps), np.empty(reps)
    for i in range(reps):
        x = rng.standard_normal(n)
        c = x[0::2] + x[1::2]
        for pw, out in ((p, bp), (q, bq)):
            vf, vc = np.sum(np.abs(x) ** pw), np.sum(np.abs(c) ** pw)
            out[i] = pw * math.log(2) / (math.log(2) + math.log(vc) - math.log(vf))
    emp = n * np.cov(bp, bq)[0, 1]
    assert emp == pytest.approx(sm.k_kernel(p, q, beta), rel=0.1)


def test_kernel_domain():
    with pytest.raises(sm.DomainError):
        sm.k_kernel(0.8, 0.5, 1.5)
    with pytest.raises(sm.DomainError):
        sm.k_kernel(1.2, 0.5, 2.0)


# ---------------------------------------------------------------------------
# optimal power
# ---------------------------------------------------------------------------


def test_optimal_power_gaussian():
    assert sm.optimal_power(2.0) == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("beta", [0.8, 1.2, 1.3, 1.5, 1.75, 1.9])
def test_optimal_power_is_grid_minimum(beta):
    r = sm.search_optimal_power(beta)
    lo, hi = sm.search_interval(beta)
    grid = np.linspace(lo, hi, 400)
    k = sm.k_diagonal(grid, beta)
    if r.clamped:
        assert r.p == pytest.approx(sm.admissible_lower_bound(beta))
        assert grid[np.argmin(k)] < r.p
    else:
        assert r.k_value <= k.min() * (1 + 1e-6)
        assert abs(r.p - grid[np.argmin(k)]) < 2 * (hi - lo) / 400


def test_optimal_power_value_case_a():
    r = sm.search_optimal_power(1.5)
    assert not r.clamped
    assert math.sqrt(r.k_value) == pytest.approx(3.313, abs=2e-3)


def test_kernel_u_shape():
    grid = np.linspace(0.05, 0.74, 50)
    d = np.diff(sm.k_diagonal(grid, 1.5))
    assert np.count_nonzero(np.diff(np.sign(d)) != 0) == 1


def test_admissible_bound_only_above_sqrt2():
    assert sm.admissible_lower_bound(1.3) is None
    assert sm.admissible_lower_bound(1.5) == pytest.approx(0.5)
    assert sm.admissible_lower_bound(2.0) is None


@given(st.floats(0.8, 1.99))
def test_optimal_power_in_search_interval(beta):
    r = sm.search_optimal_power(beta)
    lo, hi = sm.search_interval(beta)
    assert lo <= r.p <= hi
