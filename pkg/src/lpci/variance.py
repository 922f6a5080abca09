"""Fixed-n variance estimates for the conventional and bias-corrected centerings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import LocalDesign, LpFit, RbcFit
from .errors import LeverageOne

FLAVORS = ("HC0", "HC1", "HC2", "HC3")


def _flavor(flavor: str) -> str:
    f = str(flavor).upper()
    if f not in FLAVORS:
        raise ValueError(f"unknown HC flavor {flavor!r}")
    return f


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2: float
    se: float
    flavor: str
    centering: str


def hat_traces(local: LocalDesign):
    """``tr(Q)`` and ``tr(Q'Q)`` for ``Q = R Gamma^-1 Omega / n``."""
    A = local.projector
    R = local.R
    tr_q = float(local.leverage.sum())
    tr_qq = float(np.sum((R.T @ R) * (A @ A.T)))
    return tr_q, tr_qq


def hc_multipliers(local: LocalDesign, flavor: str = "HC0"):
    """Per-observation multipliers applied to squared residuals."""
    flavor = _flavor(flavor)
    n = local.n
    if flavor == "HC0":
        return np.ones(n)
    if flavor == "HC1":
        tr_q, tr_qq = hat_traces(local)
        denom = n - 2 * tr_q + tr_qq
        if not denom > 0:
            raise LeverageOne(f"HC1 divisor {denom:.3g} is not positive")
        return np.full(n, n / denom)
    q = local.leverage
    act = local.active
    if np.any(q[act] >= 1):
        raise LeverageOne("a weighted observation has leverage >= 1")
    out = np.ones(n)
    out[act] = 1.0 / (1.0 - q[act])
    if flavor == "HC3":
        out[act] **= 2
    return out


def residual_weights(fit: LpFit, flavor: str = "HC0"):
    return hc_multipliers(fit.design, flavor)


def _quadratic(row, h, n, v, sig):
    # v!^2 e' G^-1 (h Omega S Omega' / n) G^-1 e with S diagonal
    return math.factorial(v) ** 2 * h * float(np.sum(row * row * sig)) / n


def _se(sigma2, n, h, v):
    return math.sqrt(max(sigma2, 0.0) / (n * h ** (1 + 2 * v)))


def sigma2_conventional(fit: LpFit, flavor: str = "HC0", sigma_diag=None) -> VarianceEstimate:
    """Variance of the degree-p estimate from its own squared residuals.

    ``sigma_diag`` replaces the residual-based diagonal when given.
    """
    cfg = fit.config
    local = fit.design
    if sigma_diag is None:
        sig = fit.residuals**2 * hc_multipliers(local, flavor)
    else:
        sig = np.broadcast_to(np.asarray(sigma_diag, dtype=float), (local.n,))
    row = local.gram_inv[cfg.v] @ local.omega
    s2 = _quadratic(row, cfg.h, local.n, cfg.v, sig)
    return VarianceEstimate(s2, _se(s2, local.n, cfg.h, cfg.v), _flavor(flavor), "conventional")


def sigma2_rbc(rbc: RbcFit, flavor: str = "HC0", sigma_diag=None) -> VarianceEstimate:
    """Variance of the bias-corrected center.

    Residuals (and, for HC1-HC3, leverages) come from the degree-(p+1) fit
    at bandwidth b, with no further bias correction.
    """
    cfg = rbc.config
    local = rbc.fit_p1.design
    if sigma_diag is None:
        sig = rbc.fit_p1.residuals**2 * hc_multipliers(local, flavor)
    else:
        sig = np.broadcast_to(np.asarray(sigma_diag, dtype=float), (local.n,))
    row = rbc.design.main.gram_inv[cfg.v] @ rbc.omega_rbc
    s2 = _quadratic(row, cfg.h, local.n, cfg.v, sig)
    return VarianceEstimate(s2, _se(s2, local.n, cfg.h, cfg.v), _flavor(flavor), "rbc")
