import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_instance
from lpci.bandwidth import BandwidthChoice, choose_bandwidth, fixed_bandwidth
from lpci.design import LpConfig, build_design, fit_local, fit_lp
from lpci.errors import ZeroSe
from lpci.inference import (
    CoverageLoss,
    build_ci,
    check_loss,
    normal_quantiles,
    t_statistic,
)
from lpci.variance import sigma2_rbc
from lpci.design import fit_rbc


def test_normal_quantile_value():
    z_l, z_u = normal_quantiles(0.05)
    assert round(z_u, 6) == 1.959964
    assert z_l == -z_u


def test_interval_shape():
    xs, ys, cfg = random_instance(0, n=200)
    ci = build_ci(xs, ys, cfg, 0.1, "rbc")
    assert ci.lower <= ci.upper
    assert ci.center == pytest.approx((ci.lower + ci.upper) / 2, rel=1e-14)
    assert ci.width == pytest.approx((ci.z_u - ci.z_l) * ci.se, rel=1e-14)
    assert ci.level == pytest.approx(0.9)


def test_noiseless_low_degree_zero_width():
    xs = np.linspace(-1, 1, 60)
    ys = 2 - 3 * xs
    ci = build_ci(xs, ys, LpConfig(p=1, h=0.5, eval=0.2), method="conventional")
    assert ci.width == pytest.approx(0.0, abs=1e-12)
    assert ci.center == pytest.approx(2 - 0.6, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_rbc_at_ratio_one_matches_higher_degree_center(seed):
    xs, ys, cfg = random_instance(seed, n=150)
    cfg = cfg.replace(b=cfg.h)
    ci = build_ci(xs, ys, cfg, method="rbc")
    # independent center: degree p+1 fit at the same bandwidth
    hi = fit_lp(xs, ys, cfg.replace(p=cfg.p + 1))
    assert ci.center == pytest.approx(math.factorial(cfg.v) * hi.beta[cfg.v], rel=1e-10)
    # scale from the corrected weights
    d = build_design(xs, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rb = fit_rbc(xs, ys, cfg, d)
    assert ci.se == pytest.approx(sigma2_rbc(rb).se, rel=1e-14)


def test_bandwidth_choice_applied_and_ratio_kept():
    xs, ys, cfg = random_instance(1, n=200)
    bw = fixed_bandwidth(0.7, xs.size)
    ci = build_ci(xs, ys, cfg, bw=bw)
    assert ci.h == 0.7 and ci.h / ci.b == pytest.approx(cfg.rho)


@pytest.mark.parametrize("seed", range(5))
def test_t_statistic_parts(seed):
    xs, ys, cfg = random_instance(seed, n=120)
    ci = build_ci(xs, ys, cfg)
    assert t_statistic(xs, ys, cfg, "rbc", ci.center) == 0.0
    t0 = t_statistic(xs, ys, cfg, "rbc", 0.3)
    assert t0 == pytest.approx((ci.center - 0.3) / ci.se, rel=1e-12)
    t1 = t_statistic(xs, ys, cfg, "rbc", 0.3 + 0.05)
    assert t1 - t0 == pytest.approx(-0.05 / ci.se, rel=1e-9)


def test_t_statistic_zero_se():
    xs = np.linspace(-1, 1, 30)
    with pytest.raises(ZeroSe):
        t_statistic(xs, 1 + xs, LpConfig(p=1, h=0.5), "conventional", 1.0)


@given(st.integers(0, 40), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_coverage_event_equivalence(seed, value):
    xs, ys, cfg = random_instance(seed, n=80)
    for method in ("conventional", "rbc"):
        ci = build_ci(xs, ys, cfg, 0.05, method)
        T = t_statistic(xs, ys, cfg, method, value)
        inside = ci.covers(value)
        if abs(abs(T) - ci.z_u) > 1e-12:
            assert inside == (ci.z_l <= T <= ci.z_u)


@given(st.floats(0.2, 5), st.floats(-10, 10), st.integers(0, 20))
@settings(max_examples=30, deadline=None)
def test_affine_equivariance(c, d, seed):
    xs, ys, cfg = random_instance(seed, n=80)
    cfg = cfg.replace(v=0)
    for method in ("conventional", "rbc"):
        a = build_ci(xs, ys, cfg, method=method)
        b = build_ci(xs, c * ys + d, cfg, method=method)
        assert b.lower == pytest.approx(c * a.lower + d, abs=1e-10 * (1 + abs(d)))
        assert b.upper == pytest.approx(c * a.upper + d, abs=1e-10 * (1 + abs(d)))


def test_asymmetric_quantiles():
    xs, ys, cfg = random_instance(3, n=100)
    ci = build_ci(xs, ys, cfg, quantiles=(-1.0, 2.0))
    assert ci.lower == pytest.approx(ci.center - 2 * ci.se)
    assert ci.upper == pytest.approx(ci.center + ci.se)
    with pytest.raises(ValueError):
        build_ci(xs, ys, cfg, quantiles=(1.0, -1.0))


@pytest.mark.parametrize("kind", ["mse", "us", "ce", "to"])
def test_selectors_feed_intervals(kind):
    rng = np.random.default_rng(9)
    xs = rng.uniform(-1, 1, 400)
    ys = np.sin(3 * xs) + rng.normal(0, 0.2, xs.size)
    cfg = LpConfig(p=1, eval=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bw = choose_bandwidth(xs, ys, cfg, kind)
    assert isinstance(bw, BandwidthChoice) and bw.h > 0
    ci = build_ci(xs, ys, cfg, bw=bw)
    assert np.isfinite(ci.lower) and ci.lower < ci.upper


def test_undersmoothed_rate():
    rng = np.random.default_rng(2)
    xs = rng.uniform(-1, 1, 500)
    ys = np.sin(3 * xs) + rng.normal(0, 0.2, xs.size)
    cfg = LpConfig(p=1, eval=0.0)
    mse = choose_bandwidth(xs, ys, cfg, "mse")
    us = choose_bandwidth(xs, ys, cfg, "us")
    assert us.h / mse.h == pytest.approx(500 ** (1 / 5 - 1 / 3), rel=1e-12)


# -- check loss -------------------------------------------------------------------


def test_check_loss_examples():
    assert check_loss(0.02, 0.5) == pytest.approx(0.01)
    assert check_loss(-0.03, 1 / 3) == pytest.approx(0.02)
    assert check_loss(0.0, 0.3) == 0.0
    np.testing.assert_allclose(check_loss(np.array([1.0, -1.0]), 0.25), [0.25, 0.75])
    with pytest.raises(ValueError):
        check_loss(1.0, 1.0)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 100), st.floats(0.01, 0.99))
@settings(max_examples=200)
def test_check_loss_properties(e1, e2, a, tau):
    L = CoverageLoss(tau)
    assert L(e1) >= 0
    assert L(a * e1) == pytest.approx(a * L(e1), rel=1e-12, abs=1e-300)
    assert L(e1 + e2) <= L(e1) + L(e2) + 1e-9
    assert L(e1) <= (tau + 1) * abs(e1) + 1e-12
