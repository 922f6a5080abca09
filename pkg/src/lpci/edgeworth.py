"""Plug-in Edgeworth coverage-error coefficients and the bias constant.

Population expectations ``E[h^-1 f(X_i)]`` are replaced by ``(nh)^-1 sum f``
and pair expectations ``E[h^-2 g(X_i, X_j)]`` by ``(nh)^-2 sum_{i,j} g``;
population Gram matrices are replaced by their sample counterparts.  The
pair kernel l1 is never materialized: it is kept in the low-rank form
``L1 = f 1' + A B'`` so every pair sum costs O(n p^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .design import DesignSystem, LpConfig, build_design, fit_local, global_polynomial
from .errors import DegenerateBias

CENTERINGS = ("conventional", "rbc")

# Names of the twelve expectation terms entering omega4, in order.
OMEGA4_TERMS = (
    "m3",
    "l0_l1diag",
    "m4",
    "l0sq_lev",
    "l0cube_cross",
    "l0sq_pair_proj",
    "triple_factored",
    "l0_fourth",
    "centered_var_l0sq",
    "l1_pair_var",
    "l1_pair_centered",
    "centered_var_sq",
)


def _centering(c: str) -> str:
    if c not in CENTERINGS:
        raise ValueError(f"unknown centering {c!r}")
    return c


@dataclass(frozen=True)
class Influence:
    """Influence values l0 and the low-rank pair kernel ``L1[i,j] = f_i + A_i . B_j``.

    ``rt``/``kt``/``Gi`` are the design rows, kernel-weighted rows and
    inverse Gram matrix of the fit that studentizes the centering.
    """

    l0: np.ndarray
    f: np.ndarray
    A: np.ndarray
    B: np.ndarray
    rt: np.ndarray
    kt: np.ndarray
    Gi: np.ndarray
    h: float
    n: int

    def l1_diag(self):
        return self.f + np.einsum("ik,ik->i", self.A, self.B)

    def l1_matrix(self):
        return self.f[:, None] + self.A @ self.B.T

    def pair_sum(self, w, y):
        """``sum_{i,j} w_i L1[i,j] y_j``."""
        return float(w @ self.f) * float(y.sum()) + float((w @ self.A) @ (self.B.T @ y))


def influence(design: DesignSystem, centering: str) -> Influence:
    centering = _centering(centering)
    cfg = design.config
    p, v, h = cfg.p, cfg.v, cfg.h
    main = design.main
    Gi = main.gram_inv
    R = main.R
    k = R * main.weights[:, None]
    a = math.factorial(v) * Gi[v]
    l0p = k @ a
    f = h * l0p
    A = k @ Gi
    B = -(main.weights * (R @ a))[:, None] * R
    if centering == "conventional":
        return Influence(l0p, f, A, B, R, k, Gi, h, main.n)

    bar = design.bar
    Gbi = bar.gram_inv
    Rb = bar.R
    kb = Rb * bar.weights[:, None]
    d = kb @ Gbi
    s = d[:, p + 1]
    rho = cfg.rho
    c = rho ** (p + 2)
    lam1 = design.Lambda1
    aL = float(a @ lam1)
    l0 = l0p - c * aL * s
    f = f - c * h * aL * s
    alpha = main.weights * (R @ a)
    col_s = -c * (-alpha * (R @ (Gi @ lam1)) + l0p * main.u ** (p + 1))
    col_d = (c * rho * aL * bar.weights * (Rb @ Gbi[p + 1]))[:, None] * Rb
    A = np.hstack([A, s[:, None], d])
    B = np.hstack([B, col_s[:, None], col_d])
    return Influence(l0, f, A, B, Rb, kb, Gbi, h, main.n)


def ell0(design: DesignSystem, centering: str = "conventional"):
    """Influence values at every observation of the design."""
    return influence(design, centering).l0


def ell0_at(design: DesignSystem, x, centering: str = "conventional"):
    """Influence value at arbitrary covariate point(s) ``x``."""
    cfg = design.config
    p, v = cfg.p, cfg.v
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = (x - cfg.eval) / cfg.h
    ku = np.power.outer(u, np.arange(p + 1)) * np.asarray(cfg.kernel(u)).reshape(-1, 1)
    a = math.factorial(v) * design.main.gram_inv[v]
    out = ku @ a
    if _centering(centering) == "rbc":
        ub = (x - cfg.eval) / cfg.b
        kb = np.power.outer(ub, np.arange(p + 2)) * np.asarray(cfg.kernel(ub)).reshape(-1, 1)
        s = kb @ design.bar.gram_inv[p + 1]
        out = out - cfg.rho ** (p + 2) * float(a @ design.Lambda1) * s
    return out


@dataclass(frozen=True)
class PluginMoments:
    sigma_tilde2: float
    terms: np.ndarray
    centering: str
    config: LpConfig
    n: int
    h: float

    @property
    def m3_hat(self) -> float:
        return float(self.terms[0])

    @property
    def m4_hat(self) -> float:
        return float(self.terms[2])

    def as_dict(self):
        return dict(zip(OMEGA4_TERMS, map(float, self.terms)))


def moments_from_influence(inf: Influence, resid) -> tuple[float, np.ndarray]:
    """sigma_tilde^2 and the twelve omega4 expectations from residuals."""
    e = np.asarray(resid, dtype=float)
    n, h = inf.n, inf.h
    l = inf.l0
    e2 = e * e
    vhat = e2
    s1 = 1.0 / (n * h)
    s2 = 1.0 / (n * n * h * h)

    def avg(x):
        return s1 * float(np.sum(x))

    sig2 = avg(l * l * vhat)
    Gi = inf.Gi
    q = np.einsum("ik,ik->i", inf.rt @ Gi, inf.kt)
    cc = l * l * vhat - float(np.mean(l * l * vhat))
    t = np.empty(12)
    t[0] = avg(l**3 * e**3)
    t[1] = avg(l * inf.l1_diag() * e2)
    t[2] = avg(l**4 * (e2 * e2 - vhat * vhat))
    t[3] = avg(l * l * q * e2)
    u = s1 * (inf.kt.T @ (l * e2))
    t[4] = float((s1 * ((l**3 * e2) @ inf.rt)) @ Gi @ u)
    g = inf.rt @ Gi
    U = (g.T * (l * l)) @ g
    V = (inf.kt.T * e2) @ inf.kt
    t[5] = s2 * float(np.sum(U * V))
    Mm = s1 * ((inf.rt.T * (l * l)) @ inf.rt)
    t[6] = float(u @ Gi @ Mm @ Gi @ u)
    t[7] = avg(l**4 * e2 * e2)
    t[8] = avg(cc * l * l * e2)
    t[9] = s2 * inf.pair_sum(l * vhat, l * l * e2)
    t[10] = s2 * inf.pair_sum(l * e2, cc)
    t[11] = avg(cc * cc)
    return sig2, t


def pilot_bandwidth(xs, p: int) -> float:
    """Rule-of-thumb pilot: interquartile range times ``n^(-1/(2p+3))``."""
    xs = np.asarray(xs, dtype=float)
    q75, q25 = np.percentile(xs, [75, 25])
    iqr = q75 - q25
    if not iqr > 0:
        iqr = float(np.ptp(xs)) or 1.0
    return float(iqr * xs.size ** (-1.0 / (2 * p + 3)))


def plugin_moments(xs, ys, config: LpConfig, centering: str = "rbc",
                   design: DesignSystem | None = None) -> PluginMoments:
    """Estimate sigma_tilde^2 and the omega expectations at ``config``'s bandwidths.

    Residuals come from the fit that studentizes the centering: the degree-p
    fit at h (conventional) or the degree-(p+1) fit at b (rbc).
    """
    centering = _centering(centering)
    design = design or build_design(xs, config)
    local = design.main if centering == "conventional" else design.bar
    resid = fit_local(local, ys, config).residuals
    inf = influence(design, centering)
    sig2, terms = moments_from_influence(inf, resid)
    return PluginMoments(sig2, terms, centering, config, design.n, config.h)


def bias_constant(xs, ys, config: LpConfig, centering: str = "rbc",
                  boundary: str | None = None,
                  design: DesignSystem | None = None) -> tuple[float, int]:
    """Leading fixed-n bias constant ``B`` and its exponent ``a``.

    Derivatives come from a global polynomial of degree p+4.  For the
    bias-corrected centering the interior case (``a = p+3``) keeps both the
    order p+2 and p+3 contributions; the boundary case has ``a = p+2``.
    """
    centering = _centering(centering)
    design = design or build_design(xs, config)
    boundary = boundary or design.boundary
    p, v, h = config.p, config.v, config.h
    rho, b = config.rho, config.b
    pilot = global_polynomial(xs, ys, config.eval, p + 4)
    mu = pilot.derivatives
    fac = math.factorial
    Gi = design.main.gram_inv
    vf = fac(v)
    lam1, lam2, lam3 = design.Lambda1, design.Lambda2, design.Lambda3
    if centering == "conventional":
        B = vf * float(Gi[v] @ lam1) * mu[p + 1] / fac(p + 1)
        return B, p + 1
    Gbi_last = design.bar.gram_inv[p + 1]
    lb1 = float(Gbi_last @ design.LambdaBar1)
    lb2 = float(Gbi_last @ design.LambdaBar2)
    if boundary in ("left", "right"):
        vec = (lam2 - lam1 * lb1 / rho) * mu[p + 2] / fac(p + 2)
        return vf * float(Gi[v] @ vec), p + 2
    vec = (mu[p + 2] / fac(p + 2)) * (lam2 / h - lam1 * lb1 * b / h**2) + (
        mu[p + 3] / fac(p + 3)
    ) * (lam3 - lam1 * lb2 / rho**2)
    return vf * float(Gi[v] @ vec), p + 3


@dataclass(frozen=True)
class EdgeworthCoefficients:
    """Plug-in Edgeworth polynomials; ``omega(k, z)`` evaluates the k-th one."""

    sigma_tilde2: float
    terms: np.ndarray
    bias_constant: float
    bias_exponent: int
    centering: str
    lam: float = 0.0

    @property
    def m3(self) -> float:
        return float(self.terms[0])

    def omega1(self, z):
        s = math.sqrt(self.sigma_tilde2)
        return norm.pdf(z) * self.m3 / s**3 * (2 * np.square(z) - 1) / 6

    def omega2(self, z):
        return -norm.pdf(z) / math.sqrt(self.sigma_tilde2) + 0.0 * np.asarray(z)

    def omega3(self, z):
        return -norm.pdf(z) * np.asarray(z) / 2

    def omega4(self, z):
        z = np.asarray(z, dtype=float)
        s2 = self.sigma_tilde2
        t = self.terms
        z2 = z * z
        a = z * (z2 - 3)
        c = z * (z2 - 1)
        total = (
            t[0] ** 2 / s2**3 * (z * z2 / 3 + 7 * z / 4 + s2 * a / 4)
            - t[1] / s2 * a / 2
            + t[2] / s2**2 * a / 8
            - t[3] / s2 * c / 2
            - t[4] / s2**2 * c
            + t[5] / s2 * c / 4
            + t[6] / s2**2 * c / 2
            - t[7] / s2**2 * a / 24
            + t[8] / s2**2 * c / 4
            + t[9] / s2**2 * a
            - t[10] / s2**2 * z
            - t[11] / s2**2 * z * (z2 + 1) / 8
        )
        return norm.pdf(z) * total

    def omega5(self, z):
        return -norm.pdf(z) / self.sigma_tilde2 * np.asarray(z) / 2

    def omega6(self, z):
        return norm.pdf(z) * self.m3 / self.sigma_tilde2**2 * np.asarray(z) ** 3 / 3

    def omega(self, k: int, z):
        return getattr(self, f"omega{k}")(z)

    def expansion(self, z, n: int, h: float):
        """Edgeworth correction to ``P[T < z] - Phi(z)`` at sample size n, bandwidth h."""
        eta = math.sqrt(n * h) * h**self.bias_exponent * self.bias_constant
        r = 1.0 / math.sqrt(n * h)
        return (
            r * self.omega1(z)
            + eta * self.omega2(z)
            + self.lam * self.omega3(z)
            + r * r * self.omega4(z)
            + eta * eta * self.omega5(z)
            + r * eta * self.omega6(z)
        )


def edgeworth_coefficients(xs, ys, config: LpConfig, centering: str = "rbc",
                           boundary: str | None = None) -> EdgeworthCoefficients:
    design = build_design(xs, config)
    mom = plugin_moments(xs, ys, config, centering, design)
    if not mom.sigma_tilde2 > 0:
        raise DegenerateBias("plug-in variance is zero; coverage-error constants undefined")
    B, a = bias_constant(xs, ys, config, centering, boundary, design)
    return EdgeworthCoefficients(mom.sigma_tilde2, mom.terms, B, a, centering)


def ce_objective(H: float, coeffs: EdgeworthCoefficients, alpha: float = 0.05,
                 n: int | None = None, eta: float | None = None) -> float:
    """Signed coverage-error objective of the symmetric interval.

    Without ``n`` this is the constant part ``H^-1 2w4 + H^(1+2a) 2B^2 w5 + H^a 2B w6``
    at ``z = z_(alpha/2)``, valid when ``eta = 1/(1+a)``.  With ``n`` (and
    ``eta``, default ``1/(1+a)``) the rate factors at ``h = H n^-eta`` are kept.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    z = norm.ppf(1 - alpha / 2)
    a = coeffs.bias_exponent
    B = coeffs.bias_constant
    w4, w5, w6 = coeffs.omega4(z), coeffs.omega5(z), coeffs.omega6(z)
    if n is None:
        return float(2 * w4 / H + H ** (1 + 2 * a) * 2 * B * B * w5 + H**a * 2 * B * w6)
    eta = 1.0 / (1 + a) if eta is None else eta
    h = H * n ** (-eta)
    return float(2 * w4 / (n * h) + n * h ** (1 + 2 * a) * 2 * B * B * w5 + h**a * 2 * B * w6)
