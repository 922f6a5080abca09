import math
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from conftest import random_instance
from lpci.bandwidth import (
    EquivalentKernel,
    RhoObjective,
    _ce_constant,
    ce_constant_minimizer,
    equivalent_kernel,
    golden_section,
    h_ce_from_coeffs,
    h_ce_optimal,
    h_mse_rot,
    h_tradeoff,
    h_tradeoff_from_coeffs,
    k_star,
    rho_opt,
    rho_opt_detail,
)
from lpci.design import LpConfig
from lpci.edgeworth import EdgeworthCoefficients, edgeworth_coefficients
from lpci.errors import DegenerateBias, NoInteriorMinimum
from lpci.kernels import IntegrationRange, Kernel, quadrature

KERNELS = ("uniform", "triangular", "epanechnikov")
BOUNDARIES = ("interior", "left", "right")


def quiet(fn, *a, **k):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*a, **k)


def smooth_sample(n=500, seed=0, noise=0.3):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1, 1, n)
    ys = np.sin(2 * xs) + 0.5 * xs**3 + rng.normal(0, noise, n)
    return xs, ys


# -- MSE rule of thumb ---------------------------------------------------------


def test_mse_rate_law():
    xs, ys = smooth_sample()
    cfg = LpConfig(p=1, eval=0.2, boundary="interior")
    ch = h_mse_rot(xs, ys, cfg)
    assert ch.eta == pytest.approx(1 / 5)
    assert ch.at_n(2 * ch.n) / ch.h == pytest.approx(2 ** (-1 / 5), rel=1e-14)
    assert ch.h == pytest.approx(ch.H * ch.n ** (-ch.eta), rel=1e-14)


@pytest.mark.parametrize("p", [0, 1, 2])
def test_mse_fallback_for_low_degree_mean(p):
    xs = np.linspace(-1, 1, 200)
    rng = np.random.default_rng(p)
    ys = 1.0 + 0.5 * xs * (p > 0) + rng.normal(0, 1e-3, xs.size)
    ys = ys - np.polyval(np.polyfit(xs, ys, p + 2), xs) + np.polyval(np.polyfit(xs, ys, p), xs)
    ch = h_mse_rot(xs, ys, LpConfig(p=p, eval=0.1))
    assert "degenerate-bias-fallback" in ch.diagnostics
    assert ch.h > 0


def test_mse_constant_vs_independent_recomputation():
    # epanechnikov, interior, p=1, v=0: int K^2 = 3/5, mu2 = 1/5
    xs, ys = smooth_sample(400, seed=3)
    x0 = 0.1
    cfg = LpConfig(p=1, v=0, eval=x0, boundary="interior")
    ch = h_mse_rot(xs, ys, cfg)
    coef = np.polyfit(xs - x0, ys, 3)
    resid = ys - np.polyval(coef, xs - x0)
    s2 = resid @ resid / (xs.size - 4)
    d2 = 2 * coef[-3]
    q75, q25 = np.percentile(xs, [75, 25])
    w = (q75 - q25) * xs.size ** (-0.2)
    dens = np.sum(np.abs(xs - x0) <= w) / (xs.size * 2 * w)
    V = s2 * 0.6 / dens
    B = 0.2 * d2 / 2
    H = (V / (4 * B * B)) ** 0.2
    assert ch.H == pytest.approx(H, rel=1e-10)


# -- coverage-error optimal -----------------------------------------------------


@pytest.fixture(scope="module")
def coeffs_interior():
    xs, ys = smooth_sample(500, seed=1)
    cfg = LpConfig(p=1, h=0.4, b=0.4, eval=0.3, boundary="interior")
    return quiet(edgeworth_coefficients, xs, ys, cfg, "rbc")


def test_ce_local_optimality(coeffs_interior):
    c = coeffs_interior
    z = norm.ppf(0.975)
    H, obj, interior = ce_constant_minimizer(c, 0.05)
    assert interior
    f = lambda t: abs(float(_ce_constant(t, c, z)))
    assert f(H) == pytest.approx(obj, abs=1e-15)
    assert f(H * 1.01) >= f(H) and f(H * 0.99) >= f(H)


def test_ce_zero_bias_has_no_interior_minimum(coeffs_interior):
    c = coeffs_interior
    c0 = EdgeworthCoefficients(c.sigma_tilde2, c.terms, 0.0, c.bias_exponent, c.centering)
    ch = h_ce_from_coeffs(c0, 500)
    assert "no-interior-minimum" in ch.diagnostics
    with pytest.raises(NoInteriorMinimum):
        h_ce_from_coeffs(c0, 500, strict=True)


@pytest.mark.parametrize("p", [0, 1, 2, 3])
def test_ce_frozen_constant_rate(p, coeffs_interior):
    c = coeffs_interior
    cp = EdgeworthCoefficients(c.sigma_tilde2, c.terms, c.bias_constant, p + 3, "rbc")
    a, b = h_ce_from_coeffs(cp, 500), h_ce_from_coeffs(cp, 2000)
    assert b.h / a.h == pytest.approx(4 ** (-1 / (p + 4)), rel=1e-12)
    assert a.at_n(2000) == pytest.approx(b.h, rel=1e-14)


def test_ce_rate_exponent_by_location():
    xs, ys = smooth_sample(500, seed=2)
    inner = quiet(h_ce_optimal, xs, ys, LpConfig(p=1, eval=0.0))
    edge = quiet(h_ce_optimal, xs, ys, LpConfig(p=1, eval=float(xs.min())))
    assert inner.eta == pytest.approx(1 / 5)
    assert edge.eta == pytest.approx(1 / 4)
    assert inner.h > 0 and edge.h > 0


# -- trade-off ------------------------------------------------------------------


@pytest.mark.parametrize("weight", [0.1, 0.5, 0.9])
def test_tradeoff_first_order_condition(weight, coeffs_interior):
    c = coeffs_interior
    v, alpha = 0, 0.05
    z = norm.ppf(1 - alpha / 2)
    ch = h_tradeoff_from_coeffs(c, 500, v, alpha, weight)
    H, a = ch.H, c.bias_exponent
    lhs = weight * (1 + 2 * a) * 2 * c.bias_constant**2 * abs(c.omega5(z)) * H ** (2 * a)
    rhs = (1 - weight) * (1 + 2 * v) * 4 * z * z * c.sigma_tilde2 * H ** (-2 - 2 * v)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


def test_tradeoff_weight_limits(coeffs_interior):
    c = coeffs_interior
    mid = h_tradeoff_from_coeffs(c, 500, 0, weight=0.5)
    ws = [0.9, 0.99, 1 - 1e-6, 1 - 1e-12]
    Hs = [h_tradeoff_from_coeffs(c, 500, 0, weight=w).H for w in ws]
    assert all(a > b for a, b in zip(Hs, Hs[1:]))
    expo = 1 / (2 + 2 * c.bias_exponent)
    assert Hs[-1] / mid.H == pytest.approx(((1 - ws[-1]) / ws[-1]) ** expo, rel=1e-12)
    near_zero = h_tradeoff_from_coeffs(c, 500, 0, weight=1e-300)
    assert "capped" in near_zero.diagnostics
    with pytest.raises(ValueError):
        h_tradeoff_from_coeffs(c, 500, 0, weight=1.0)


def test_tradeoff_eta_band(coeffs_interior):
    c = coeffs_interior
    a = c.bias_exponent
    ch = h_tradeoff_from_coeffs(c, 500, 0)
    assert 1 / (1 + 2 * a) < ch.eta <= 1 / (1 + a)
    with pytest.raises(ValueError):
        h_tradeoff_from_coeffs(c, 500, 0, eta_to=1 / (1 + 2 * a))
    ok = h_tradeoff_from_coeffs(c, 500, 0, eta_to=1 / (1 + a))
    assert ok.h == pytest.approx(ok.H * 500 ** (-1 / (1 + a)))


def test_tradeoff_degenerate_bias(coeffs_interior):
    c = coeffs_interior
    c0 = EdgeworthCoefficients(c.sigma_tilde2, c.terms, 0.0, c.bias_exponent, "rbc")
    with pytest.raises(DegenerateBias):
        h_tradeoff_from_coeffs(c0, 500, 0)


def test_tradeoff_end_to_end():
    xs, ys = smooth_sample(300, seed=4)
    ch = quiet(h_tradeoff, xs, ys, LpConfig(p=1, eval=0.1), weight=0.5)
    assert ch.method == "trade-off" and ch.h > 0 and ch.weight == 0.5


def test_golden_section_quadratic():
    x, fx = golden_section(lambda t: (t - 0.3) ** 2, -1, 2, 1e-12)
    assert x == pytest.approx(0.3, abs=1e-6) and fx < 1e-12


# -- equivalent kernels -------------------------------------------------------


@pytest.mark.parametrize("p", range(4))
def test_uniform_rho_one_matches_kstar(p):
    u = np.linspace(-1, 1, 201)
    for v in range(p + 1):
        for bd in BOUNDARIES:
            a = equivalent_kernel("uniform", 1.0, p, v, bd)(u)
            b = k_star(p + 1, v, bd)(u)
            assert np.max(np.abs(a - b)) <= 1e-8


@pytest.mark.parametrize("kernel", KERNELS)
@pytest.mark.parametrize("rho", [0.5, 1.0])
def test_moment_conditions(kernel, rho):
    for p in range(5):
        for v in range(p + 1):
            for bd in BOUNDARIES:
                ek = equivalent_kernel(kernel, rho, p, v, bd)
                for j in range(p + 2):
                    want = math.factorial(v) if j == v else 0.0
                    assert abs(ek.moment(j) - want) <= 1e-8, (p, v, bd, j)


@pytest.mark.parametrize("kernel", KERNELS)
def test_moment_conditions_large_rho_relative(kernel):
    # for rho > 1 the kernel values reach 1e7 at p=4; the identities hold to
    # rounding relative to the kernel's magnitude
    u = np.linspace(-1, 1, 2001)
    for p in range(5):
        for v in range(p + 1):
            for bd in BOUNDARIES:
                ek = equivalent_kernel(kernel, 2.0, p, v, bd)
                mag = max(1.0, float(np.abs(ek(u)).max()))
                for j in range(p + 2):
                    want = math.factorial(v) if j == v else 0.0
                    assert abs(ek.moment(j) - want) <= 1e-14 * mag, (p, v, bd, j)


@pytest.mark.parametrize("rho", [0.3, 0.7, 1.0, 1.6])
def test_support(rho):
    for bd in BOUNDARIES:
        ek = equivalent_kernel("epanechnikov", rho, 1, 0, bd)
        s = max(1.0, 1.0 / rho)
        assert ek.support == s
        outside = np.array([-s - 1e-9, s + 1e-9, -s - 1, s + 1])
        assert np.all(ek(outside) == 0.0)
        if bd == "left":
            assert np.all(ek(np.array([-0.5, -1e-9])) == 0.0)


@pytest.mark.parametrize("kernel", KERNELS)
def test_local_linear_first_term_reduces_to_normalized_kernel(kernel):
    ek = EquivalentKernel(Kernel(kernel), None, 1, 0, "interior")
    K = Kernel(kernel)
    u = np.linspace(-1, 1, 101)
    mass = quadrature(lambda t: K(t), IntegrationRange(), K.breakpoints)
    np.testing.assert_allclose(ek(u), K(u) / mass, atol=1e-12)


def test_kstar_constant_half():
    u = np.linspace(-1, 1, 41)
    np.testing.assert_allclose(k_star(0, 0)(u), 0.5, atol=1e-13)


@pytest.mark.parametrize("p", range(5))
@pytest.mark.parametrize("bd", BOUNDARIES)
def test_kstar_moments(p, bd):
    for v in range(p + 1):
        ks = k_star(p, v, bd)
        for j in range(p + 1):
            want = math.factorial(v) if j == v else 0.0
            assert abs(ks.moment(j) - want) <= 1e-8


def test_boundary_kstar_asymmetric():
    ks = k_star(1, 0, "left")
    u = np.linspace(0, 1, 11)
    assert np.all(ks(-u[1:]) == 0.0)
    assert abs(ks(u[1]) - ks(u[-2])) > 1e-2
    assert abs(ks.moment(1)) <= 1e-10
    assert ks.moment(0) == pytest.approx(1.0, abs=1e-10)


# -- rho* -----------------------------------------------------------------------


@pytest.mark.parametrize("p", range(4))
def test_rho_opt_uniform_is_one(p):
    for v in range(p + 1):
        for bd in ("interior", "left"):
            assert rho_opt("uniform", p, v, bd) == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("bd", ["left", "interior"])
def test_rho_opt_triangular_stable_under_node_doubling(bd):
    a = rho_opt("triangular", 1, 0, bd, nodes=64)
    b = rho_opt("triangular", 1, 0, bd, nodes=128)
    assert abs(a - b) <= 1e-3 * a


@pytest.mark.parametrize("kernel", ["triangular", "epanechnikov"])
@pytest.mark.parametrize("bd", ["left", "interior"])
def test_rho_opt_local_optimality(kernel, bd):
    r, val = rho_opt_detail(kernel, 1, 0, bd)
    obj = RhoObjective(kernel, 1, 0, bd)
    assert obj(r) == pytest.approx(val, rel=1e-12, abs=1e-15)
    assert obj(r + 0.01) >= val and obj(r - 0.01) >= val
    assert 0.2 <= r <= 2.0


def test_rho_opt_flat_objective_picks_one():
    # p - v even at an interior point: the correction vanishes, rho is unidentified
    obj = RhoObjective("epanechnikov", 1, 1, "interior")
    assert obj(0.5) == pytest.approx(obj(1.5), rel=1e-12)
    assert rho_opt("epanechnikov", 1, 1, "interior") == 1.0
