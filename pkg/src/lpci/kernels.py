"""Kernel functions, truncated kernel moments and a fixed-node quadrature engine.

Every population-limit quantity in the package (limiting Gram matrices,
equivalent kernels, L2 distances between kernels) is a polynomial times a
piecewise-polynomial kernel, so a composite Gauss-Legendre rule that splits
the range at the kernel's kinks integrates it exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import IntegrationFailure

NAMED_KERNELS = ("uniform", "triangular", "epanechnikov")

_ALIASES = {
    "uni": "uniform",
    "unif": "uniform",
    "uniform": "uniform",
    "tri": "triangular",
    "triangular": "triangular",
    "epa": "epanechnikov",
    "epan": "epanechnikov",
    "epanechnikov": "epanechnikov",
}

DEFAULT_NODES = 64
DEFAULT_PANELS = 4


@dataclass(frozen=True)
class Kernel:
    """A nonnegative, even weighting function supported on [-1, 1].

    Parameters
    ----------
    kind : str
        One of ``uniform``, ``triangular``, ``epanechnikov`` (common short
        aliases accepted) or ``custom-table``.
    grid, values : tuple of float, optional
        Only for ``custom-table``: knots on [-1, 1] and the kernel values
        there.  The table is linearly interpolated.  It must be symmetric
        and nonnegative.  Linear independence of ``(1, K(u) r(u))`` on the
        support is a user obligation and is not checked.
    """

    kind: str
    grid: tuple[float, ...] = field(default=(), repr=False)
    values: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        object.__setattr__(self, "kind", kind)
        if kind in NAMED_KERNELS:
            return
        if kind != "custom-table":
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        grid = np.asarray(self.grid, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != vals.shape or grid.size < 2:
            raise ValueError("custom kernel table needs matching 1-d grid and values")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("custom kernel grid must be strictly increasing")
        if grid[0] < -1 - 1e-12 or grid[-1] > 1 + 1e-12:
            raise ValueError("custom kernel grid must lie in [-1, 1]")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("custom kernel values must be finite and nonnegative")
        if not np.allclose(grid, -grid[::-1], atol=1e-12) or not np.allclose(
            vals, vals[::-1], atol=1e-12
        ):
            raise ValueError("custom kernel table must be symmetric about zero")
        object.__setattr__(self, "grid", tuple(grid.tolist()))
        object.__setattr__(self, "values", tuple(vals.tolist()))

    @classmethod
    def from_table(cls, grid: Sequence[float], values: Sequence[float]) -> "Kernel":
        return cls("custom-table", tuple(grid), tuple(values))

    @property
    def breakpoints(self) -> tuple[float, ...]:
        """Points in [-1, 1] where the kernel is not smooth."""
        if self.kind == "custom-table":
            return tuple(sorted(set(self.grid) | {-1.0, 1.0}))
        return (-1.0, 0.0, 1.0)

    def __call__(self, u):
        return evaluate(self, u)


def evaluate(kernel: Kernel, u):
    """Kernel weight at ``u`` (scalar or array); exactly zero for ``|u| > 1``."""
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    inside = a <= 1.0
    if kernel.kind == "uniform":
        out = np.where(inside, 0.5, 0.0)
    elif kernel.kind == "triangular":
        out = np.where(inside, 1.0 - a, 0.0)
    elif kernel.kind == "epanechnikov":
        out = np.where(inside, 0.75 * (1.0 - u * u), 0.0)
    else:
        out = np.interp(u, kernel.grid, kernel.values, left=0.0, right=0.0)
        out = np.where(inside, out, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class IntegrationRange:
    """A closed interval ``[lower, upper]`` used for (truncated) integrals."""

    lower: float = -1.0
    upper: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ValueError("integration range must be finite")
        if not self.lower < self.upper:
            raise ValueError("integration range needs lower < upper")

    @classmethod
    def for_boundary(cls, boundary: str) -> "IntegrationRange":
        """Unit kernel range for an interior, left- or right-boundary point."""
        if boundary in ("interior", None):
            return cls(-1.0, 1.0)
        if boundary in ("left", "left-boundary"):
            return cls(0.0, 1.0)
        if boundary in ("right", "right-boundary"):
            return cls(-1.0, 0.0)
        raise ValueError(f"unknown boundary {boundary!r}")

    def scaled(self, factor: float) -> "IntegrationRange":
        return IntegrationRange(self.lower * factor, self.upper * factor)

    def contains(self, u):
        u = np.asarray(u, dtype=float)
        return (u >= self.lower) & (u <= self.upper)


@lru_cache(maxsize=16)
def _gauss_legendre(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def quadrature_nodes(
    rng: IntegrationRange,
    breaks: Sequence[float] = (),
    nodes: int = DEFAULT_NODES,
    panels: int = DEFAULT_PANELS,
):
    """Abscissae and weights of the composite rule on ``rng``.

    The range is first cut at every breakpoint strictly inside it, then
    each piece is split into ``panels`` equal panels of ``nodes`` points.
    """
    cuts = [rng.lower, rng.upper]
    cuts += [c for c in breaks if rng.lower < c < rng.upper]
    cuts = np.unique(np.asarray(cuts, dtype=float))
    edges = np.concatenate(
        [np.linspace(a, b, panels + 1)[:-1] for a, b in zip(cuts[:-1], cuts[1:])]
        + [cuts[-1:]]
    )
    x0, w0 = _gauss_legendre(nodes)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    xs = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    ws = (half[:, None] * w0[None, :]).ravel()
    return xs, ws


def quadrature(
    f: Callable,
    rng: IntegrationRange,
    breaks: Sequence[float] = (),
    nodes: int = DEFAULT_NODES,
    panels: int = DEFAULT_PANELS,
):
    """Integrate ``f`` over ``rng`` with composite Gauss-Legendre.

    ``f`` is called once with the full vector of abscissae.  It may return
    an array whose last axis runs over the abscissae (e.g. a stack of
    matrices), in which case the integral is taken elementwise.
    """
    xs, ws = quadrature_nodes(rng, breaks, nodes, panels)
    vals = np.asarray(f(xs), dtype=float)
    if vals.ndim == 0:
        vals = np.full(xs.shape, float(vals))
    if not np.all(np.isfinite(vals)):
        raise IntegrationFailure("integrand returned non-finite values")
    out = vals @ ws
    return float(out) if np.ndim(out) == 0 else out


def moment(
    kernel: Kernel,
    j: int,
    rng: IntegrationRange = IntegrationRange(),
    power: int = 1,
    nodes: int = DEFAULT_NODES,
    panels: int = DEFAULT_PANELS,
) -> float:
    """``int K(u)**power * u**j du`` over ``rng``."""
    if j < 0:
        raise ValueError("moment order must be nonnegative")
    if power not in (1, 2):
        raise ValueError("power must be 1 or 2")
    return quadrature(
        lambda u: evaluate(kernel, u) ** power * u**j,
        rng,
        kernel.breakpoints,
        nodes,
        panels,
    )


def gram_matrices(
    kernel: Kernel,
    degree: int,
    rng: IntegrationRange,
    extra: int = 0,
    nodes: int = DEFAULT_NODES,
    panels: int = DEFAULT_PANELS,
):
    """Limiting matrices ``int K r r'`` and ``int K r u^(degree+k)`` (k=1..extra).

    Returns the ``(degree+1, degree+1)`` Gram matrix and a list of the
    ``extra`` moment vectors, all with density set to one.
    """
    top = 2 * degree + extra
    mom = np.array([moment(kernel, j, rng, 1, nodes, panels) for j in range(top + 1)])
    idx = np.arange(degree + 1)
    gram = mom[idx[:, None] + idx[None, :]]
    vecs = [mom[idx + degree + k] for k in range(1, extra + 1)]
    return gram, vecs


def get_kernel(name) -> Kernel:
    return name if isinstance(name, Kernel) else Kernel(name)
