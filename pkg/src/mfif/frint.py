"""Mixed Riemann-Liouville fractional integrals of sampled surfaces.

Integrals are taken in normalised coordinates over ``[0, x_1] x ... x [0, x_q]``.
Each axis contributes a weight vector obtained by integrating the weakly
singular kernel exactly against the hat functions of the piecewise-linear
interpolant, so the singularity at ``t = x`` is never sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .field import GridField, SampledSurface, as_field
from .fif import FifSpec, corner_b_values, grid_level, structured_grid
from .net import DomainError, Net


class OrderError(ValueError):
    pass


class OrientationError(ValueError):
    """Raised when a^beta would need a branch choice (negative slope, non-integer beta)."""


@dataclass(frozen=True)
class FracOrder:
    beta: tuple[float, ...]

    def __init__(self, beta):
        b = tuple(float(v) for v in np.atleast_1d(beta))
        if not b:
            raise OrderError("beta needs at least one component")
        for k, v in enumerate(b):
            if not (v > 0 and math.isfinite(v)):
                raise OrderError(f"beta[{k}] = {v} must be positive")
        object.__setattr__(self, "beta", b)

    @property
    def q(self) -> int:
        return len(self.beta)

    def gamma_product(self) -> float:
        return math.prod(math.gamma(b) for b in self.beta)


@dataclass(frozen=True)
class QuadratureSpec:
    """Panels per axis and the refinement factor used in convergence studies."""

    panels: tuple[int, ...]
    refine: int = 2

    def __init__(self, panels, refine: int = 2):
        p = tuple(int(v) for v in np.atleast_1d(panels))
        if any(v < 4 for v in p):
            raise ValueError(f"panel counts must be >= 4, got {p}")
        if refine < 2:
            raise ValueError(f"refinement factor must be >= 2, got {refine}")
        object.__setattr__(self, "panels", p)
        object.__setattr__(self, "refine", int(refine))

    def refined(self, times: int = 1) -> "QuadratureSpec":
        return QuadratureSpec([n * self.refine ** times for n in self.panels], self.refine)


def _is_integer(b: float) -> bool:
    return float(b).is_integer()


def kernel_weights(nodes: np.ndarray, centre: float, upper: float, beta: float) -> np.ndarray:
    """Weights ``w`` with ``sum w_j f_j = int_0^upper (centre - t)^(beta-1) P(t) dt``.

    ``P`` is the piecewise-linear interpolant of ``f`` on ``nodes`` (which must
    start at 0).  ``upper`` may exceed ``centre`` only for integer ``beta``.
    No ``1/Gamma(beta)`` factor is applied.
    """
    t = np.asarray(nodes, dtype=float)
    w = np.zeros(t.size)
    if upper <= t[0]:
        return w
    if upper > t[-1] * (1 + 1e-14):
        raise DomainError(f"upper limit {upper} beyond last node {t[-1]}")
    if upper > centre and not _is_integer(beta):
        raise OrientationError(f"upper limit {upper} past kernel centre {centre} needs integer beta")
    lo = t[:-1]
    hi = np.minimum(t[1:], upper)
    live = hi > lo
    lo, hi = lo[live], hi[live]
    tj = t[:-1][live]
    h = (t[1:] - t[:-1])[live]
    p, r = centre - lo, centre - hi
    if not _is_integer(beta):
        r = np.maximum(r, 0.0)
    i0 = (p ** beta - r ** beta) / beta
    i1 = (centre - tj) * i0 - (p ** (beta + 1) - r ** (beta + 1)) / (beta + 1)
    idx = np.nonzero(live)[0]
    np.add.at(w, idx + 1, i1 / h)
    np.add.at(w, idx, i0 - i1 / h)
    return w


def _contract(values: np.ndarray, weights: Sequence[np.ndarray]) -> float:
    out = values
    for w in weights:
        out = np.tensordot(w, out, axes=([0], [0]))
    return float(out)


def _check_point(x, q: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != q:
        raise DomainError(f"point has {x.size} coordinates, expected {q}")
    if np.any(x < 0) or np.any(x > 1):
        raise DomainError(f"point {x.tolist()} outside [0, 1]^{q}")
    return x


def _sampled(f, beta: FracOrder, quad: QuadratureSpec | None, net: Net | None):
    """Node coordinates (normalised) and values for the interpolant of ``f``."""
    if isinstance(f, SampledSurface):
        nodes = [np.asarray(a) for a in f.axes]
        vals = np.asarray(f.values)
        if quad is not None:
            vals, nodes = _coarsen(vals, nodes, quad.panels)
        return nodes, vals
    if isinstance(f, GridField):
        return _sampled(f.surface, beta, quad, net)
    f = as_field(f)
    if quad is None:
        raise ValueError("a quadrature spec is needed to integrate a field")
    if len(quad.panels) != beta.q:
        raise ValueError(f"{len(quad.panels)} panel counts for {beta.q} axes")
    domain = net.domain if net is not None else [(0.0, 1.0)] * beta.q
    nodes = [np.linspace(0.0, 1.0, n + 1) for n in quad.panels]
    orig = [lo + t * (hi - lo) for t, (lo, hi) in zip(nodes, domain)]
    return nodes, f.on_grid(orig)


def _coarsen(vals, nodes, panels):
    idx = []
    for k, (t, n) in enumerate(zip(nodes, panels)):
        have = len(t) - 1
        if have % n:
            raise ValueError(f"axis {k + 1}: {n} panels do not divide {have} sample intervals")
        idx.append(np.arange(0, have + 1, have // n))
    return vals[np.ix_(*idx)], [t[i] for t, i in zip(nodes, idx)]


def mixed_rl(f, beta, x, quad: QuadratureSpec | None = None, net: Net | None = None) -> float:
    """Mixed Riemann-Liouville integral ``J^beta f`` at the normalised point ``x``.

    ``f`` may be a :class:`SampledSurface` (integrated as its multilinear
    interpolant, optionally coarsened to ``quad.panels``) or any field, which is
    sampled on ``quad.panels`` uniform panels of the (optionally given) net's box.
    """
    beta = beta if isinstance(beta, FracOrder) else FracOrder(beta)
    x = _check_point(x, beta.q)
    nodes, vals = _sampled(f, beta, quad, net)
    if vals.ndim != beta.q:
        raise ValueError(f"surface has {vals.ndim} axes, beta has {beta.q}")
    ws = [kernel_weights(t, xk, xk, b) for t, xk, b in zip(nodes, x, beta.beta)]
    return _contract(vals, ws) / beta.gamma_product()


def frac_coefficient(maps, beta, delta: float) -> float:
    """``delta * prod a_k^beta_k`` for the per-axis cell maps ``maps``."""
    beta = beta if isinstance(beta, FracOrder) else FracOrder(beta)
    out = float(delta)
    for m, b in zip(maps, beta.beta):
        out *= _signed_power(m.a, b)
    return out


def _signed_power(a: float, b: float) -> float:
    if a < 0 and not _is_integer(b):
        raise OrientationError(f"slope {a} < 0 with non-integer beta {b}")
    return float(a ** b)


# --- the self-referential identity ----------------------------------------


def _substituted_weights(grid_coarse: np.ndarray, n_fine: int, cell: int, M: int,
                         x: float, beta: float) -> np.ndarray:
    """Weights on the fine grid for ``int_0^x (x-w)^(beta-1) A(u_cell(w)) dw``.

    ``A o u_cell`` is piecewise linear on the next coarser grid, whose node
    ``r`` lands on fine index ``(cell-1)N + r`` (odd cell) or ``cell N - r`` (even).
    """
    w_coarse = kernel_weights(grid_coarse, x, x, beta)
    N = len(grid_coarse) - 1
    r = np.arange(N + 1)
    idx = (cell - 1) * N + r if cell % 2 == 1 else cell * N - r
    out = np.zeros(n_fine)
    out[idx] = w_coarse
    return out


@dataclass
class _Level:
    vals: np.ndarray
    nodes: list
    coarse: list
    level: int


def _level_data(surface: SampledSurface, net: Net, level: int) -> _Level:
    L = grid_level(net, surface.dims)
    if not 1 <= level <= L:
        raise ValueError(f"quadrature level {level} outside 1..{L}")
    fine = structured_grid(net, level)
    coarse = structured_grid(net, level - 1)
    idx = [np.arange(0, n, M ** (L - level)) for n, M in zip(surface.dims, net.Ms)]
    vals = np.asarray(surface.values)[np.ix_(*idx)]
    return _Level(vals, [g.coords for g in fine], [g.coords for g in coarse], level)


def _terms(lev: _Level, spec: FifSpec, cell, beta: FracOrder, x):
    """``(J A(u(x)), J A(x), Bhat(x))`` from one quadrature level, unscaled by Gamma."""
    net = spec.net
    q = net.q
    maps = [net.maps[k][i - 1] for k, i in enumerate(cell)]
    y = [m(xk) for m, xk in zip(maps, x)]
    c = [m(0.0) for m in maps]
    b = beta.beta
    abeta = [_signed_power(m.a, bk) for m, bk in zip(maps, b)]
    n = [len(t) for t in lev.nodes]
    direct_y = [kernel_weights(lev.nodes[k], y[k], y[k], b[k]) for k in range(q)]
    lhs = _contract(lev.vals, direct_y)
    jx = _contract(lev.vals, [kernel_weights(lev.nodes[k], x[k], x[k], b[k]) for k in range(q)])
    subst = [_substituted_weights(lev.coarse[k], n[k], cell[k], net.Ms[k], x[k], b[k]) for k in range(q)]
    bhat = 0.0
    for p in range(q - 1, -1, -1):
        ws = []
        scale = 1.0
        for k in range(q):
            if k < p:
                ws.append(direct_y[k])
            elif k == p:
                ws.append(kernel_weights(lev.nodes[k], y[k], c[k], b[k]))
            else:
                ws.append(subst[k])
                scale *= abeta[k]
        bhat += scale * _contract(lev.vals, ws)
    corners = corner_b_values(spec, cell)
    unit = np.array([0.0, 1.0])
    bw = [kernel_weights(unit, x[k], x[k], b[k]) for k in range(q)]
    bhat += math.prod(abeta) * _contract(corners, bw)
    return lhs, jx, bhat


def bhat(surface: SampledSurface, spec: FifSpec, cell, beta, x, level: int | None = None) -> float:
    """The additive part of the transformed self-referential map at ``x``.

    Sum of the base integral up to ``u_q(0)``, the progressively substituted
    mixed terms and the ``prod a^beta`` weighted integral of the cell's ``B``.
    ``level`` picks the quadrature grid (defaults to the surface's own level).
    """
    beta = beta if isinstance(beta, FracOrder) else FracOrder(beta)
    cell = _check_cell(spec.net, cell)
    x = _check_point(x, spec.net.q)
    lev = _level_data(surface, spec.net, level or grid_level(spec.net, surface.dims))
    return _terms(lev, spec, cell, beta, x)[2] / beta.gamma_product()


def _check_cell(net: Net, cell) -> tuple[int, ...]:
    cell = tuple(int(i) for i in np.atleast_1d(cell))
    if len(cell) != net.q or any(not 1 <= i <= M for i, M in zip(cell, net.Ms)):
        raise ValueError(f"cell {cell} invalid for partition counts {net.Ms}")
    return cell


@dataclass
class FrintIdentityReport:
    beta: tuple[float, ...]
    cells: list
    points: list
    levels: list
    panels: list
    lhs: list  # per level, per (cell, point)
    rhs: list
    residuals: list
    max_residual: list
    orders: list
    observed_order: float
    exact: bool = False
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "beta": list(self.beta),
            "cells": [list(c) for c in self.cells],
            "points": [list(p) for p in self.points],
            "levels": list(self.levels),
            "panels": [list(p) for p in self.panels],
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residuals": self.residuals,
            "max_residual": self.max_residual,
            "orders": self.orders,
            "observed_order": self.observed_order,
            "exact": self.exact,
            "notes": list(self.notes),
        }


# residuals at or below this are treated as exact: the order is then meaningless
EXACT_RESIDUAL = 1e-12


def odd_cells(net: Net) -> list[tuple[int, ...]]:
    """Cells whose index is odd on every axis (all maps orientation-preserving)."""
    return [tuple(i + 1 for i in c) for c in np.ndindex(*net.Ms) if all(i % 2 == 0 for i in c)]


def verify_identity(surface: SampledSurface, spec: FifSpec, beta, cells=None,
                    points_per_cell: int = 3, levels: Sequence[int] | None = None,
                    seed: int = 0, allow_even: bool = False) -> FrintIdentityReport:
    """Residual of the transformed self-referential equation under refinement.

    For each cell and test point ``x``: ``LHS = J A(u(x))`` and
    ``RHS = frac_coefficient * J A(x) + bhat(x)``.  Quadrature levels are
    exact coarsenings of ``surface`` (panels ``M_k**level``).  The observed
    order between consecutive levels is ``log(r_prev / r) / log(M)``.
    Cells with an even index are rejected unless ``allow_even`` and every
    ``beta_k`` is an integer.
    """
    beta = beta if isinstance(beta, FracOrder) else FracOrder(beta)
    net = spec.net
    if beta.q != net.q:
        raise ValueError(f"beta has {beta.q} components for a {net.q}-axis net")
    L = grid_level(net, surface.dims)
    cells = odd_cells(net) if cells is None else [_check_cell(net, c) for c in cells]
    for c in cells:
        if any(i % 2 == 0 for i in c):
            if not allow_even:
                raise OrientationError(f"cell {c} has an orientation-reversing axis; pass allow_even")
            if not all(_is_integer(b) for b in beta.beta):
                raise OrientationError(f"cell {c} needs integer beta, got {beta.beta}")
    levels = list(levels) if levels is not None else list(range(max(1, L - 3), L + 1))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.05, 0.95, size=(points_per_cell, net.q))
    pts = np.vstack([pts, np.ones((1, net.q))])
    G = beta.gamma_product()
    all_lhs, all_rhs, all_res, mx, panels = [], [], [], [], []
    for level in levels:
        lev = _level_data(surface, net, level)
        panels.append([M ** level for M in net.Ms])
        ls, rs, es = [], [], []
        for c in cells:
            coef = frac_coefficient([net.maps[k][i - 1] for k, i in enumerate(c)], beta, spec.delta)
            for x in pts:
                lhs, jx, bh = _terms(lev, spec, c, beta, x)
                lhs, rhs = lhs / G, (coef * jx + bh) / G
                ls.append(lhs)
                rs.append(rhs)
                es.append(abs(lhs - rhs))
        all_lhs.append(ls)
        all_rhs.append(rs)
        all_res.append(es)
        mx.append(max(es))
    M = max(net.Ms)
    orders = []
    for a, b in zip(mx, mx[1:]):
        orders.append(math.log(a / b) / math.log(M) if a > 0 and b > 0 else float("inf"))
    exact = mx[-1] <= EXACT_RESIDUAL
    observed = float("inf") if exact or not orders else min(orders)
    notes = []
    if exact:
        notes.append("finest residual at rounding level; identity holds exactly for the interpolant")
    return FrintIdentityReport(beta.beta, cells, pts.tolist(), levels, panels, all_lhs, all_rhs,
                               all_res, mx, orders, observed, exact, notes)
