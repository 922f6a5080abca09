"""Local polynomial design algebra and the conventional / bias-corrected fits.

Everything is computed in the scaled coordinates ``u_i = (X_i - x)/h`` so the
Gram matrices have O(1) entries for any bandwidth; coefficients are mapped
back to the raw ``(X_i - x)`` parameterization by dividing by ``h**k``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyWindow, PilotSingular, Singular
from .kernels import Kernel, get_kernel

RCOND_MIN = 1e-12
RHO_MIN, RHO_MAX = 0.05, 20.0

BOUNDARIES = ("auto", "interior", "left", "right")


def _norm_boundary(boundary: str) -> str:
    b = {"left-boundary": "left", "right-boundary": "right"}.get(boundary, boundary)
    if b not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}")
    return b


@dataclass(frozen=True)
class LpConfig:
    """Tuning and evaluation settings for one local polynomial fit.

    ``b`` defaults to ``h`` (ratio one).  The ratio ``h/b`` is clamped to
    ``[0.05, 20]`` with a warning, since outside that range the bias
    correction design is numerically degenerate at realistic sample sizes.
    """

    p: int = 1
    v: int = 0
    h: float = 1.0
    b: float | None = None
    kernel: Kernel = field(default_factory=lambda: Kernel("epanechnikov"))
    eval: float = 0.0
    boundary: str = "auto"

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 0:
            raise ValueError("p must be a nonnegative integer")
        if int(self.v) != self.v or not 0 <= self.v <= self.p:
            raise ValueError("v must be an integer with 0 <= v <= p")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "v", int(self.v))
        object.__setattr__(self, "kernel", get_kernel(self.kernel))
        object.__setattr__(self, "boundary", _norm_boundary(self.boundary))
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError("h must be positive and finite")
        b = self.h if self.b is None else self.b
        if not (np.isfinite(b) and b > 0):
            raise ValueError("b must be positive and finite")
        rho = self.h / b
        if not RHO_MIN <= rho <= RHO_MAX:
            clamped = min(max(rho, RHO_MIN), RHO_MAX)
            warnings.warn(f"rho={rho:.4g} clamped to {clamped:.4g}", stacklevel=3)
            b = self.h / clamped
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "b", float(b))

    @property
    def rho(self) -> float:
        return self.h / self.b

    def replace(self, **kw) -> "LpConfig":
        d = dict(p=self.p, v=self.v, h=self.h, b=self.b, kernel=self.kernel,
                 eval=self.eval, boundary=self.boundary)
        if "rho" in kw:
            rho = kw.pop("rho")
            kw["b"] = kw.get("h", d["h"]) / rho
        d.update(kw)
        return LpConfig(**d)


def resolve_boundary(xs, x0: float, h: float, boundary: str = "auto") -> str:
    """Classify ``x0`` as interior or a left/right boundary point.

    In ``auto`` mode a point is a boundary point when it lies within ``h``
    of the smallest (left) or largest (right) observed covariate.
    """
    boundary = _norm_boundary(boundary)
    if boundary != "auto":
        return boundary
    xs = np.asarray(xs, dtype=float)
    dl = x0 - xs.min()
    dr = xs.max() - x0
    if min(dl, dr) >= h:
        return "interior"
    return "left" if dl <= dr else "right"


def powers(u, degree: int):
    """Rows ``r_degree(u_i)' = (1, u_i, ..., u_i**degree)`` as an (n, degree+1) array."""
    return np.power.outer(np.asarray(u, dtype=float), np.arange(degree + 1))


class LocalDesign:
    """Kernel-weighted design of one degree at one bandwidth.

    Attributes are the scaled quantities: ``gram = (nh)^-1 sum K r r'``,
    ``omega = h^-1 [K(u_i) r(u_i)]`` (shape (degree+1, n)).
    """

    def __init__(self, xs, x0: float, degree: int, bandwidth: float, kernel: Kernel):
        xs = np.asarray(xs, dtype=float)
        self.n = xs.size
        self.degree = degree
        self.bandwidth = float(bandwidth)
        self.kernel = kernel
        self.x0 = float(x0)
        self.xs = xs
        self.u = (xs - x0) / bandwidth
        self.weights = np.asarray(kernel(self.u), dtype=float).reshape(-1)
        self.R = powers(self.u, degree)
        self.active = self.weights > 0
        self.effective_n = int(self.active.sum())
        kr = self.R.T * self.weights
        self.omega = kr / bandwidth
        self.gram = kr @ self.R / (self.n * bandwidth)

    def lam(self, k: int):
        """``Omega [u_i**(degree+k)] / n``."""
        return self.omega @ self.u ** (self.degree + k) / self.n

    @cached_property
    def gram_inv(self):
        d = self.degree + 1
        if self.effective_n == 0:
            raise EmptyWindow("no observation receives positive kernel weight")
        distinct = np.unique(self.xs[self.active]).size
        if distinct < d:
            raise Singular(
                f"{distinct} distinct weighted points, need at least {d} for degree {self.degree}"
            )
        rcond = 1.0 / np.linalg.cond(self.gram)
        if not rcond >= RCOND_MIN:
            raise Singular(f"local Gram matrix reciprocal condition {rcond:.3g} below {RCOND_MIN:g}")
        return np.linalg.solve(self.gram, np.eye(d))

    @cached_property
    def projector(self):
        """``Gamma^-1 Omega / n``: maps Y to scaled coefficients."""
        return self.gram_inv @ self.omega / self.n

    @cached_property
    def leverage(self):
        """Diagonal of the hat matrix ``Q = R Gamma^-1 Omega / n``."""
        return np.einsum("ij,ji->i", self.R, self.projector)

    def scale(self):
        return self.bandwidth ** np.arange(self.degree + 1)


@dataclass(frozen=True)
class DesignSystem:
    """Main (degree p, bandwidth h) and bar (degree p+1, bandwidth b) designs."""

    main: LocalDesign
    bar: LocalDesign
    config: LpConfig
    boundary: str

    @property
    def n(self) -> int:
        return self.main.n

    @property
    def effective_n(self) -> int:
        return self.main.effective_n

    @property
    def Gamma(self):
        return self.main.gram

    @property
    def Omega(self):
        return self.main.omega

    @property
    def Lambda1(self):
        return self.main.lam(1)

    @property
    def Lambda2(self):
        return self.main.lam(2)

    @property
    def Lambda3(self):
        return self.main.lam(3)

    @property
    def GammaBar(self):
        return self.bar.gram

    @property
    def OmegaBar(self):
        return self.bar.omega

    @property
    def LambdaBar1(self):
        return self.bar.lam(1)

    @property
    def LambdaBar2(self):
        return self.bar.lam(2)


def build_design(xs, config: LpConfig) -> DesignSystem:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size < 1:
        raise ValueError("xs must be a non-empty vector")
    main = LocalDesign(xs, config.eval, config.p, config.h, config.kernel)
    if main.effective_n == 0:
        raise EmptyWindow(f"no observation within h={config.h:g} of x={config.eval:g}")
    bar = LocalDesign(xs, config.eval, config.p + 1, config.b, config.kernel)
    boundary = resolve_boundary(xs, config.eval, config.h, config.boundary)
    return DesignSystem(main, bar, config, boundary)


@dataclass(frozen=True)
class LpFit:
    """Weighted least squares fit; ``beta`` is in raw ``(X - x)`` units."""

    beta: np.ndarray
    beta_scaled: np.ndarray
    residuals: np.ndarray
    design: LocalDesign
    config: LpConfig

    @property
    def degree(self) -> int:
        return self.design.degree


def fit_local(local: LocalDesign, ys, config: LpConfig) -> LpFit:
    ys = np.asarray(ys, dtype=float)
    if ys.shape != (local.n,):
        raise ValueError("xs and ys must have the same length")
    if local.effective_n == 0:
        raise EmptyWindow("no observation receives positive kernel weight")
    beta_scaled = local.projector @ ys
    beta = beta_scaled / local.scale()
    residuals = ys - local.R @ beta_scaled
    return LpFit(beta, beta_scaled, residuals, local, config)


def fit_lp(xs, ys, config: LpConfig, design: DesignSystem | None = None) -> LpFit:
    """Degree-p local polynomial fit at bandwidth h."""
    design = design or build_design(xs, config)
    return fit_local(design.main, ys, config)


def point_estimate(fit: LpFit, v: int | None = None) -> float:
    """``v! * beta[v]``, the estimate of the v-th derivative at the evaluation point."""
    v = fit.config.v if v is None else v
    if v > fit.degree:
        raise ValueError("derivative order exceeds the fitted degree")
    return math.factorial(v) * float(fit.beta[v])


@dataclass(frozen=True)
class RbcFit:
    theta_p: float
    theta_rbc: float
    theta_rbc_weights: float
    bias_term: float
    omega_rbc: np.ndarray
    fit_p: LpFit
    fit_p1: LpFit
    design: DesignSystem

    @property
    def config(self) -> LpConfig:
        return self.design.config


def omega_rbc(design: DesignSystem):
    """``Omega - rho^(p+1) Lambda1 e_{p+1}' GammaBar^-1 OmegaBar``."""
    cfg = design.config
    corr = design.bar.projector[cfg.p + 1] * design.n
    return design.Omega - cfg.rho ** (cfg.p + 1) * np.outer(design.Lambda1, corr)


def fit_rbc(xs, ys, config: LpConfig, design: DesignSystem | None = None) -> RbcFit:
    """Conventional estimate, its bias correction and the corrected center."""
    design = design or build_design(xs, config)
    p, v, h = config.p, config.v, config.h
    if design.boundary == "interior" and (p - v) % 2 == 0:
        warnings.warn("p - v is even at an interior point; bias correction "
                      "theory assumes it odd", stacklevel=2)
    fit_p = fit_local(design.main, ys, config)
    fit_p1 = fit_local(design.bar, ys, config)
    vf = math.factorial(v)
    theta_p = vf * float(fit_p.beta[v])
    gl = design.main.gram_inv @ design.Lambda1
    bias = h ** (p + 1 - v) * vf * gl[v] * float(fit_p1.beta[p + 1])
    om = omega_rbc(design)
    ys = np.asarray(ys, dtype=float)
    alt = vf / h**v * float((design.main.gram_inv[v] @ om) @ ys) / design.n
    return RbcFit(theta_p, theta_p - bias, alt, bias, om, fit_p, fit_p1, design)


@dataclass(frozen=True)
class GlobalPilot:
    """Global polynomial fit used for pilot derivatives and residual variance."""

    degree: int
    derivatives: np.ndarray
    sigma2: float
    x0: float


def global_polynomial(xs, ys, x0: float, degree: int) -> GlobalPilot:
    """Least squares polynomial of ``degree`` on all data, expanded around ``x0``.

    ``derivatives[k]`` is the k-th derivative of the fitted polynomial at
    ``x0``; ``sigma2`` is the residual variance with a degrees-of-freedom
    correction.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    n, d = xs.size, degree + 1
    if n < d + 1:
        raise PilotSingular(f"global pilot of degree {degree} needs more than {d} observations")
    scale = float(np.max(np.abs(xs - x0)))
    if not scale > 0:
        raise PilotSingular("all covariate values coincide with the evaluation point")
    t = (xs - x0) / scale
    V = powers(t, degree)
    coef, _, rank, sv = np.linalg.lstsq(V, ys, rcond=None)
    if rank < d or sv[-1] / sv[0] < RCOND_MIN:
        raise PilotSingular(f"global pilot design of degree {degree} is rank deficient")
    resid = ys - V @ coef
    k = np.arange(d)
    fact = np.array([math.factorial(j) for j in k], dtype=float)
    derivs = fact * coef / scale**k
    sigma2 = float(resid @ resid) / (n - d)
    return GlobalPilot(degree, derivs, sigma2, float(x0))
