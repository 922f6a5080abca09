"""Confidence intervals, t-statistics and the check loss."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .bandwidth import BandwidthChoice
from .design import LpConfig, build_design, fit_lp, fit_rbc, point_estimate
from .errors import ZeroSe
from .variance import sigma2_conventional, sigma2_rbc

METHODS = ("conventional", "rbc")


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    center: float
    se: float
    method: str
    z_l: float
    z_u: float
    h: float = math.nan
    b: float = math.nan
    boundary: str = ""
    n_effective: int = 0
    flavor: str = "HC0"
    diagnostics: tuple[str, ...] = field(default=())

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def normal_quantiles(alpha: float) -> tuple[float, float]:
    """Symmetric ``(z_l, z_u)`` for a two-sided level ``1 - alpha``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z = float(norm.ppf(1 - alpha / 2))
    return -z, z


def _method(method: str) -> str:
    m = {"conv": "conventional", "us": "conventional"}.get(method, method)
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return m


def with_bandwidth(config: LpConfig, bw: BandwidthChoice | float | None) -> LpConfig:
    """Config at the selected bandwidth; the ratio ``h/b`` is kept."""
    if bw is None:
        return config
    h = bw.h if isinstance(bw, BandwidthChoice) else float(bw)
    return config.replace(h=h, rho=config.rho)


def center_and_se(xs, ys, config: LpConfig, method: str = "rbc", flavor: str = "HC0"):
    """``(estimate, se, design)`` for the requested centering."""
    method = _method(method)
    design = build_design(xs, config)
    if method == "conventional":
        fit = fit_lp(xs, ys, config, design)
        return point_estimate(fit), sigma2_conventional(fit, flavor).se, design
    with warnings.catch_warnings():
        # even p - v at an interior point is legal, just not rate-improving
        warnings.simplefilter("ignore")
        rb = fit_rbc(xs, ys, config, design)
    return rb.theta_rbc, sigma2_rbc(rb, flavor).se, design


def build_ci(xs, ys, config: LpConfig, alpha: float = 0.05, method: str = "rbc",
             flavor: str = "HC0", bw: BandwidthChoice | float | None = None,
             quantiles: tuple[float, float] | None = None) -> ConfidenceInterval:
    """Interval ``[theta - z_u se, theta - z_l se]``.

    ``quantiles`` overrides the symmetric normal pair; asymmetric pairs are
    accepted but converge more slowly in coverage.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    method = _method(method)
    cfg = with_bandwidth(config, bw)
    z_l, z_u = normal_quantiles(alpha) if quantiles is None else map(float, quantiles)
    if z_l > z_u:
        raise ValueError("need z_l <= z_u")
    theta, se, design = center_and_se(xs, ys, cfg, method, flavor)
    diags = tuple(bw.diagnostics) if isinstance(bw, BandwidthChoice) else ()
    if method == "rbc" and design.boundary == "interior" and (cfg.p - cfg.v) % 2 == 0:
        diags += ("even-p-minus-v-interior",)
    return ConfidenceInterval(theta - z_u * se, theta - z_l * se, 1 - alpha, theta, se, method,
                              z_l, z_u, cfg.h, cfg.b, design.boundary,
                              design.main.effective_n, flavor.upper(), diags)


def t_statistic(xs, ys, config: LpConfig, method: str = "rbc", true_value: float = 0.0,
                flavor: str = "HC0") -> float:
    ys = np.asarray(ys, dtype=float)
    theta, se, _ = center_and_se(np.asarray(xs, float), ys, config, method, flavor)
    # residuals of exactly fitted data are rounding noise, not variability
    floor = 1e-12 * float(np.max(np.abs(ys), initial=0.0)) / config.h**config.v
    if not se > floor:
        raise ZeroSe(f"standard error {se:.3g} is numerically zero")
    return (theta - true_value) / se


def check_loss(e, tau: float):
    """``e * (tau - 1{e < 0})``; elementwise for arrays."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    e = np.asarray(e, dtype=float)
    out = e * (tau - (e < 0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CoverageLoss:
    tau: float

    def __post_init__(self):
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")

    def __call__(self, e):
        return check_loss(e, self.tau)
