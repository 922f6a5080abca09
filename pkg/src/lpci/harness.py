"""Monte Carlo coverage experiments.

Each replication draws from a seed derived from ``(seed, rep)`` only, so a
report does not depend on worker count or completion order.
"""
from __future__ import annotations

import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import hermite, polynomial

from .bandwidth import (
    _scale,
    h_ce_from_coeffs,
    h_mse_rot,
    h_tradeoff_from_coeffs,
    pilot_config,
    rho_opt,
    undersmoothed,
)
from .design import LpConfig
from .edgeworth import edgeworth_coefficients
from .errors import HarnessFailure, LpciError
from .inference import build_ci, check_loss
from .kernels import get_kernel

DEFAULT_METHODS = (
    "conventional@h_mse",
    "conventional@undersmoothed",
    "rbc@h_mse",
    "rbc@h_ce",
    "rbc@h_to",
)
MAX_FAILURE_SHARE = 0.01


# -- data generating processes -----------------------------------------------------


@dataclass(frozen=True)
class Dgp:
    name: str
    mu: Callable[[np.ndarray, int], np.ndarray]
    v_fn: Callable[[np.ndarray], np.ndarray]
    x_law: str = "uniform"
    noise: str = "gaussian"
    sigma: float = 1.0
    eval: float = 0.0
    order: int = 5

    def derivative(self, x, k: int):
        if not 0 <= k <= self.order:
            raise ValueError(f"derivative order {k} not available")
        return self.mu(np.asarray(x, dtype=float), k)

    def draw(self, n: int, rng: np.random.Generator):
        if self.x_law == "uniform":
            xs = rng.uniform(-1.0, 1.0, n)
        elif self.x_law == "beta":
            xs = 2.0 * rng.beta(2.0, 2.0, n) - 1.0
        else:
            raise ValueError(f"unknown covariate law {self.x_law!r}")
        if self.noise == "gaussian":
            eps = rng.standard_normal(n)
        elif self.noise == "t5":
            eps = rng.standard_t(5, n) * math.sqrt(3.0 / 5.0)
        else:
            raise ValueError(f"unknown noise law {self.noise!r}")
        ys = self.mu(xs, 0) + self.sigma * np.sqrt(self.v_fn(xs)) * eps
        return xs, ys


def _sin_gauss(x, k):
    # Leibniz rule on sin(3x) * exp(-x^2); d^j exp(-x^2) = (-1)^j H_j(x) exp(-x^2)
    g = np.exp(-x * x)
    out = np.zeros_like(x)
    for j in range(k + 1):
        hj = hermite.hermval(x, [0] * j + [1])
        ds = 3.0 ** (k - j) * np.sin(3 * x + (k - j) * math.pi / 2)
        out = out + math.comb(k, j) * ds * (-1) ** j * hj * g
    return out


def _poly(coefs):
    def mu(x, k):
        return polynomial.polyval(x, polynomial.polyder(coefs, k) if k else coefs)
    return mu


SEXTIC = (0.0, 1.0, -1.5, 0.0, 2.0, 0.0, -1.0)
LINEAR = (1.0, 0.5)


def _const(x):
    return np.ones_like(x)


DGPS = {
    "i": Dgp("i", _sin_gauss, _const, sigma=0.3, eval=0.5),
    "ii": Dgp("ii", _poly(SEXTIC), lambda x: 0.5 + x * x, x_law="beta", sigma=0.5, eval=0.3),
    "iii": Dgp("iii", _poly(LINEAR), _const, sigma=0.5, eval=0.0),
}


def get_dgp(name, **overrides) -> Dgp:
    """Shipped DGP by name (``i``, ``ii``, ``iii``), optionally with fields replaced."""
    if isinstance(name, Dgp):
        base = name
    else:
        key = str(name).lower()
        if key not in DGPS:
            raise ValueError(f"unknown dgp {name!r}; choose from {sorted(DGPS)}")
        base = DGPS[key]
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return base if not overrides else Dgp(**{**asdict(base), "mu": base.mu, "v_fn": base.v_fn,
                                              **overrides})


# -- replications -----------------------------------------------------------------------


@dataclass(frozen=True)
class McSettings:
    n: int
    alpha: float = 0.05
    p: int = 1
    v: int = 0
    kernel: str = "epanechnikov"
    rho: float = 1.0
    weight: float = 0.5
    flavor: str = "HC0"
    methods: tuple[str, ...] = DEFAULT_METHODS


def _validate_methods(methods):
    for m in methods:
        center, _, bw = m.partition("@")
        if center not in ("conventional", "rbc") or bw not in ("h_mse", "undersmoothed", "h_ce", "h_to"):
            raise ValueError(f"unknown method {m!r}")


def replicate(dgp: Dgp, st: McSettings, seed: int, rep: int):
    """One replication: ``{method: (covered, length, h, rho)}`` or a failure string."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(rep,)))
    xs, ys = dgp.draw(st.n, rng)
    truth = float(dgp.derivative(dgp.eval, st.v))
    cfg = LpConfig(p=st.p, v=st.v, kernel=st.kernel, eval=dgp.eval, h=1.0, b=1.0 / st.rho)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bws = {}
            need = {m.partition("@")[2] for m in st.methods}
            if need & {"h_mse", "undersmoothed"}:
                bws["h_mse"] = h_mse_rot(xs, ys, cfg)
                bws["undersmoothed"] = undersmoothed(bws["h_mse"], st.p)
            if need & {"h_ce", "h_to"}:
                coeffs = edgeworth_coefficients(xs, ys, pilot_config(xs, cfg), "rbc")
                bws["h_ce"] = h_ce_from_coeffs(coeffs, st.n, st.alpha, _scale(xs))
                if "h_to" in need:
                    bws["h_to"] = h_tradeoff_from_coeffs(coeffs, st.n, st.v, st.alpha, st.weight,
                                                         scale=_scale(xs))
            out = {}
            for m in st.methods:
                center, _, bw = m.partition("@")
                ci = build_ci(xs, ys, cfg, st.alpha, center, st.flavor, bws[bw])
                if not (np.isfinite(ci.lower) and np.isfinite(ci.upper)):
                    raise LpciError("non-finite interval")
                out[m] = (ci.covers(truth), ci.width, ci.h, ci.h / ci.b)
            return out
    except (LpciError, np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return f"{type(exc).__name__}: {exc}"


def _chunk(args):
    dgp_name, overrides, st, seed, reps = args
    dgp = get_dgp(dgp_name, **overrides)
    return [(r, replicate(dgp, st, seed, r)) for r in reps]


# -- reports -------------------------------------------------------------------------------


@dataclass
class MethodRow:
    method: str
    coverage: float
    mc_se: float
    mean_length: float
    median_h: float
    median_rho: float
    check_loss: float
    replications: int


@dataclass
class SimulationReport:
    dgp: str
    n: int
    replications: int
    alpha: float
    seed: int
    tau: float
    eval: float
    p: int
    v: int
    kernel: str
    rows: list[MethodRow]
    failures: int = 0
    failure_messages: list[str] = field(default_factory=list)
    degenerate: bool = False

    def row(self, method: str) -> MethodRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_tsv(self) -> str:
        cols = ["method", "coverage", "mc_se", "mean_length", "median_h", "median_rho",
                "check_loss", "replications"]
        buf = io.StringIO()
        buf.write("\t".join(cols) + "\n")
        for r in self.rows:
            vals = [getattr(r, c) for c in cols]
            buf.write("\t".join(v if isinstance(v, str) else format(v, ".17g") for v in vals) + "\n")
        return buf.getvalue()


def pooled_mc_se(a: MethodRow, b: MethodRow) -> float:
    """Standard error of a coverage difference between two independent-sample rates."""
    return math.sqrt(a.mc_se**2 + b.mc_se**2)


def run_mc(dgp, n: int, R: int, alpha: float = 0.05, methods=DEFAULT_METHODS, seed: int = 0,
           p: int = 1, v: int = 0, kernel: str = "epanechnikov", rho: float | str = 1.0,
           tau: float = 0.5, weight: float = 0.5, flavor: str = "HC0", workers: int = 1,
           **dgp_overrides) -> SimulationReport:
    """Coverage, length and check loss of each interval pipeline over ``R`` draws.

    ``rho="auto"`` uses the L2-optimal ratio for the kernel, degree and the
    location of the evaluation point.  Replications that hit a numerical
    failure are dropped and counted; more than 1% dropped raises.
    """
    if R < 100:
        raise ValueError("need at least 100 replications")
    if n < 50:
        raise ValueError("need n >= 50")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    methods = tuple(methods)
    _validate_methods(methods)
    name = dgp.name if isinstance(dgp, Dgp) else str(dgp)
    base = get_dgp(dgp, **dgp_overrides)
    kernel = get_kernel(kernel).kind
    if rho == "auto":
        # covariate support is [-1, 1] for every shipped law
        side = "interior" if -1 < base.eval < 1 else ("left" if base.eval <= -1 else "right")
        rho = rho_opt(kernel, p, v, side)
    st = McSettings(n, alpha, p, v, kernel, float(rho), weight, flavor, methods)

    if workers > 1:
        chunks = [list(range(i, R, workers)) for i in range(workers)]
        args = [(base if isinstance(dgp, Dgp) else name, dgp_overrides, st, seed, c) for c in chunks]
        with ProcessPoolExecutor(workers) as ex:
            results = dict(pair for part in ex.map(_chunk, args) for pair in part)
    else:
        results = {r: replicate(base, st, seed, r) for r in range(R)}

    good, msgs = [], []
    for r in range(R):
        res = results[r]
        (msgs if isinstance(res, str) else good).append(res)
    failures = len(msgs)
    if failures > MAX_FAILURE_SHARE * R:
        raise HarnessFailure(f"{failures} of {R} replications failed; first: {msgs[0]}")

    rows, widths = [], []
    for m in methods:
        cov = np.array([g[m][0] for g in good], dtype=float)
        length = np.array([g[m][1] for g in good])
        hs = np.array([g[m][2] for g in good])
        rhos = np.array([g[m][3] for g in good])
        k = cov.size
        c = float(cov.mean())
        rows.append(MethodRow(m, c, math.sqrt(c * (1 - c) / k), float(length.mean()),
                              float(np.median(hs)), float(np.median(rhos)),
                              float(check_loss(c - (1 - alpha), tau)), k))
        widths.append(float(np.median(length)))
    degenerate = base.sigma == 0 or min(widths) <= 1e-12
    return SimulationReport(name, n, R, alpha, seed, tau, base.eval, p, v, kernel, rows,
                            failures, msgs[:10], bool(degenerate))
