"""Read-Bajraktarevic operators and their fixed points on structured grids.

The level-``L`` grid of an axis with ``M`` cells is the set of images of the
endpoints ``{0, 1}`` under all depth-``L`` compositions of the axis maps; it has
``M**L + 1`` points and contains every coarser level as the points whose index
is a multiple of ``M``.  Every grid point in cell ``i`` has its preimage
``u_i^{-1}(x)`` on the level ``L-1`` sub-grid, so one application of the
operator needs no interpolation at all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .field import ConstantField, Field, GridField, SampledSurface, as_field, sup_norm
from .net import Net, eta


class SpecError(ValueError):
    """Invalid fractal-function parameters."""


class ResolutionError(ValueError):
    """A surface does not live on the structured grid the operator needs."""


class DivergenceError(RuntimeError):
    """The fixed-point iteration did not reach the requested tolerance."""


# --- specs -----------------------------------------------------------------


@dataclass(frozen=True)
class InterpolationData:
    net: Net
    z: np.ndarray

    def __post_init__(self):
        z = np.array(self.z, dtype=float)
        expected = tuple(M + 1 for M in self.net.Ms)
        if z.shape != expected:
            raise SpecError(f"data has shape {z.shape}, net needs {expected}")
        if not np.all(np.isfinite(z)):
            raise SpecError("interpolation data must be finite")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class FifSpec:
    data: InterpolationData
    delta: float

    def __post_init__(self):
        if not abs(self.delta) < 1:
            raise SpecError(f"|delta| must be < 1, got {self.delta}")

    @property
    def net(self) -> Net:
        return self.data.net


@dataclass(frozen=True)
class AlphaSpec:
    """Germ ``f``, base ``s`` and scaling ``alpha`` over a net.

    ``scale_at`` picks where the scaling is read: ``"preimage"`` uses
    ``alpha(u^{-1}(x))`` as in the self-referential equation, ``"image"`` uses
    ``alpha(x)`` as in the IFS maps.  The two agree for constant scalings.

    ``check`` controls the base/germ agreement test: ``"corners"`` (the
    ``2**q`` box corners), ``"strict"`` (every knot on the box boundary) or
    ``"none"``.
    """

    net: Net
    germ: Field
    base: Field
    scale: Field
    scale_at: str = "preimage"
    check: str = "corners"
    samples_per_cell: int = 9
    alpha_sup: float = field(init=False)
    corner_mismatch: float = field(init=False)

    def __post_init__(self):
        for name in ("germ", "base", "scale"):
            object.__setattr__(self, name, as_field(getattr(self, name)))
        if self.scale_at not in ("preimage", "image"):
            raise SpecError(f"scale_at must be 'preimage' or 'image', got {self.scale_at!r}")
        if self.check not in ("corners", "strict", "none"):
            raise SpecError(f"check must be 'corners', 'strict' or 'none', got {self.check!r}")
        for name in ("germ", "base", "scale"):
            d = getattr(self, name).dim
            if d > self.net.q:
                raise SpecError(f"{name} uses x{d} but the net has {self.net.q} axes")
        a_sup, _ = sup_norm(self.scale, self.net, self.samples_per_cell)
        if not a_sup < 1:
            raise SpecError(f"sup|alpha| must be < 1, sampled value {a_sup}")
        object.__setattr__(self, "alpha_sup", a_sup)
        mismatch = self._boundary_mismatch("strict" if self.check == "strict" else "corners")
        object.__setattr__(self, "corner_mismatch", mismatch)
        if self.check != "none" and mismatch > 1e-12:
            raise SpecError(
                f"base and germ differ by {mismatch:.6g} at the "
                f"{'boundary knots' if self.check == 'strict' else 'box corners'}"
            )

    def _boundary_mismatch(self, mode: str) -> float:
        net = self.net
        if mode == "corners":
            pts = [np.array([0.0, 1.0]) for _ in range(net.q)]
        else:
            pts = [net.knot_coords(k) for k in range(net.q)]
        orig = [net.denormalize_axis(k, p) for k, p in enumerate(pts)]
        diff = np.abs(self.germ.on_grid(orig) - self.base.on_grid(orig))
        if mode == "strict":
            on_boundary = np.zeros(diff.shape, dtype=bool)
            for k in range(net.q):
                sl = [slice(None)] * net.q
                sl[k] = [0, -1]
                on_boundary[tuple(sl)] = True
            diff = diff[on_boundary]
        return float(diff.max())


@dataclass
class FixedPointReport:
    iterations: int
    sup_change: float
    contraction_estimate: float
    residual: float
    changes: list[float]
    ratios: list[float]
    rate_bound: float
    stitch_mismatch: float
    converged: bool = True
    method: str = "iterate"

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "sup_change": self.sup_change,
            "contraction_estimate": self.contraction_estimate,
            "rate_bound": self.rate_bound,
            "residual": self.residual,
            "stitch_mismatch": self.stitch_mismatch,
            "changes": list(self.changes),
        }


# --- structured grid -------------------------------------------------------


@dataclass(frozen=True)
class AxisGrid:
    """Level-``L`` grid of one axis with its cell and preimage bookkeeping.

    ``cell`` is 1-based; ``pre`` indexes the same grid.  ``cell_up``/``pre_up``
    use the opposite tie-break at interior knots.
    """

    coords: np.ndarray
    M: int
    level: int
    cell: np.ndarray
    pre: np.ndarray
    cell_up: np.ndarray
    pre_up: np.ndarray

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def knot_index(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.M ** (self.level - 1)


def axis_coords(knots: Sequence[float], maps, level: int, uniform: bool) -> np.ndarray:
    M = len(knots) - 1
    if uniform:
        return np.linspace(0.0, 1.0, M ** level + 1)
    g = np.array([0.0, 1.0])
    for _ in range(level):
        N = len(g) - 1
        out = np.empty(M * N + 1)
        for i, u in enumerate(maps, start=1):
            seg = u(g) if i % 2 == 1 else u(g[::-1])
            out[(i - 1) * N:i * N + 1] = seg
            out[(i - 1) * N] = knots[i - 1]
            out[i * N] = knots[i]
        g = out
    return g


def _cells_and_preimages(M: int, level: int, upper: bool):
    N = M ** (level - 1)
    j = np.arange(M * N + 1)
    if upper:
        cell = np.minimum(j // N + 1, M)
    else:
        cell = np.maximum(-(-j // N), 1)
    r = j - (cell - 1) * N
    pre = np.where(cell % 2 == 1, r, N - r) * M
    return cell, pre


def axis_grid(net: Net, k: int, level: int) -> AxisGrid:
    if level < 1:
        raise ResolutionError(f"grid level must be >= 1, got {level}")
    axis = net.axes[k]
    coords = axis_coords(axis.knots, net.maps[k], level, axis.is_uniform)
    cell, pre = _cells_and_preimages(axis.M, level, upper=False)
    cell_up, pre_up = _cells_and_preimages(axis.M, level, upper=True)
    return AxisGrid(coords, axis.M, level, cell, pre, cell_up, pre_up)


def grid_level(net: Net, dims: Sequence[int]) -> int:
    """Level ``L`` with ``dims[k] == M_k**L + 1`` for all axes."""
    if len(dims) != net.q:
        raise ResolutionError(f"surface has {len(dims)} axes, net has {net.q}")
    levels = set()
    for n, M in zip(dims, net.Ms):
        L = round(math.log(n - 1, M)) if n > 1 else -1
        if L < 1 or M ** L + 1 != n:
            raise ResolutionError(f"axis size {n} is not M^L + 1 for M = {M}")
        levels.add(L)
    if len(levels) != 1:
        raise ResolutionError(f"axes sit on different levels {sorted(levels)}")
    return levels.pop()


def structured_grid(net: Net, level: int) -> list[AxisGrid]:
    return [axis_grid(net, k, level) for k in range(net.q)]


def knot_values(surface: SampledSurface, net: Net) -> np.ndarray:
    """Surface samples at the knot lattice of ``net``."""
    L = grid_level(net, surface.dims)
    idx = [np.arange(M + 1) * M ** (L - 1) for M in net.Ms]
    return surface.values[np.ix_(*idx)]


def _orig_axes(net: Net, grids: Sequence[AxisGrid]):
    return [net.denormalize_axis(k, g.coords) for k, g in enumerate(grids)]


# --- affine operator  T(g) = offset + weight * g[pre] -------------------------


@dataclass
class _AffineOperator:
    pre: tuple[np.ndarray, ...]
    offset: np.ndarray
    weight: object  # float or array
    rate: float

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self.offset + self.weight * g[np.ix_(*self.pre)]

    def linear(self, d: np.ndarray) -> np.ndarray:
        return self.weight * d[np.ix_(*self.pre)]


def corner_b_values(spec: FifSpec, cell: Sequence[int]) -> np.ndarray:
    """Corner values of ``B`` for one cell, array of shape ``(2,)*q``.

    Entry ``[b_1..b_q]`` is ``B`` at the corner with coordinate ``b_k`` on axis
    ``k``: ``z[eta(i, k)] - delta * z[k]`` with ``k = b*M``.
    """
    z = spec.data.z
    Ms = spec.net.Ms
    out = np.empty((2,) * len(Ms))
    for bits in product((0, 1), repeat=len(Ms)):
        labels = [b * M for b, M in zip(bits, Ms)]
        src = tuple(eta(i, lab, M) for i, lab, M in zip(cell, labels, Ms))
        out[bits] = z[src] - spec.delta * z[tuple(labels)]
    return out


def corner_b_field(spec: FifSpec, cell: Sequence[int]) -> Field:
    """The multilinear ``B`` of a cell as a field on ``[0, 1]^q``."""
    corners = corner_b_values(spec, cell)
    q = corners.ndim
    surf = SampledSurface(corners, tuple(np.array([0.0, 1.0]) for _ in range(q)), [(0.0, 1.0)] * q)
    return GridField(surf)


def _b_on_grid(spec: FifSpec, grids: Sequence[AxisGrid], upper: bool) -> np.ndarray:
    z = spec.data.z
    delta = spec.delta
    src, w = [], []
    for g in grids:
        cell = g.cell_up if upper else g.cell
        pre = g.pre_up if upper else g.pre
        y = g.coords[pre]
        odd = cell % 2 == 1
        # knot indices eta(cell, 0) and eta(cell, M)
        e0 = np.where(odd, cell - 1, cell)
        eM = np.where(odd, cell, cell - 1)
        src.append((e0, eM))
        w.append((1.0 - y, y))
    out = np.zeros(tuple(g.n for g in grids))
    for bits in product((0, 1), repeat=len(grids)):
        corner = tuple(b * g.M for b, g in zip(bits, grids))
        vals = z[np.ix_(*[s[b] for s, b in zip(src, bits)])] - delta * z[corner]
        weight = w[0][bits[0]]
        for k in range(1, len(grids)):
            weight = np.multiply.outer(weight, w[k][bits[k]])
        out += vals * weight
    return out


def _fif_operator(spec: FifSpec, grids, upper=False) -> _AffineOperator:
    pre = tuple((g.pre_up if upper else g.pre) for g in grids)
    return _AffineOperator(pre, _b_on_grid(spec, grids, upper), spec.delta, abs(spec.delta))


def _alpha_operator(spec: AlphaSpec, grids, upper=False) -> _AffineOperator:
    net = spec.net
    orig = _orig_axes(net, grids)
    pre = tuple((g.pre_up if upper else g.pre) for g in grids)
    F = spec.germ.on_grid(orig)
    S = spec.base.on_grid(orig)
    A = spec.scale.on_grid(orig)
    S_pre = S[np.ix_(*pre)]
    A_use = A[np.ix_(*pre)] if spec.scale_at == "preimage" else A
    if isinstance(spec.scale, ConstantField):
        A_use = spec.scale.value
        rate = abs(spec.scale.value)
    else:
        rate = float(np.max(np.abs(A_use))) if np.size(A_use) else 0.0
        rate = max(rate, spec.alpha_sup)
    return _AffineOperator(pre, F - A_use * S_pre, A_use, rate)


def _operator(spec, grids, upper=False) -> _AffineOperator:
    if isinstance(spec, FifSpec):
        return _fif_operator(spec, grids, upper)
    if isinstance(spec, AlphaSpec):
        return _alpha_operator(spec, grids, upper)
    raise TypeError(f"unsupported spec {type(spec).__name__}")


def _surface(spec, grids, values) -> SampledSurface:
    return SampledSurface(values, tuple(g.coords for g in grids), spec.net.domain, grids[0].level)


def rb_apply(spec, g: SampledSurface) -> SampledSurface:
    """One application of the Read-Bajraktarevic operator of ``spec``."""
    L = grid_level(spec.net, g.dims)
    grids = structured_grid(spec.net, L)
    return _surface(spec, grids, _operator(spec, grids).apply(np.asarray(g.values)))


def rb_apply_fif(spec: FifSpec, g: SampledSurface) -> SampledSurface:
    return rb_apply(spec, g)


def rb_apply_alpha(spec: AlphaSpec, g: SampledSurface) -> SampledSurface:
    return rb_apply(spec, g)


def multilinear_seed(spec: FifSpec, grids) -> np.ndarray:
    """Multilinear interpolant of the knot data on the grid."""
    net = spec.net
    knots = tuple(net.knot_coords(k) for k in range(net.q))
    interp = GridField(SampledSurface(spec.data.z, knots, [(0.0, 1.0)] * net.q))
    q = net.q
    coords = [g.coords.reshape([-1 if j == k else 1 for j in range(q)]) for k, g in enumerate(grids)]
    return interp.evaluate(*coords)


def _seed(spec, grids) -> np.ndarray:
    if isinstance(spec, FifSpec):
        return multilinear_seed(spec, grids)
    return spec.germ.on_grid(_orig_axes(spec.net, grids))


def _iterate(op: _AffineOperator, g0: np.ndarray, tol: float, max_iter: int | None):
    g = op.apply(g0)
    d = g - g0
    changes = [float(np.max(np.abs(d)))]
    if max_iter is None:
        max_iter = 200
        if 0 < op.rate < 1 and changes[0] > tol:
            need = math.ceil(math.log(tol / changes[0]) / math.log(op.rate)) + 10
            max_iter = max(max_iter, need)
    while changes[-1] >= tol:
        if len(changes) >= max_iter:
            raise DivergenceError(
                f"no convergence after {max_iter} iterations, last change {changes[-1]:.3g}"
            )
        # the operator is affine: the next correction is its linear part applied
        # to the last one
        d = op.linear(d)
        g = g + d
        changes.append(float(np.max(np.abs(d))))
    return g, changes


def _ratios(changes):
    return [b / a for a, b in zip(changes, changes[1:]) if a > 0]


def build(spec, level: int, tol: float = 1e-12, max_iter: int | None = None,
          method: str = "iterate"):
    """Fixed point of the operator of ``spec`` on the level-``level`` grid.

    ``method="iterate"`` runs the fixed-point iteration from the seed (the
    multilinear data interpolant, or the germ samples) until the sup-change
    drops below ``tol``.  ``method="cascade"`` converges on level 1 only and
    then fills each finer level with a single operator application, which is
    exact because finer levels only read coarser ones.

    Returns ``(surface, report)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if level < 1:
        raise ValueError("level must be >= 1")
    if method not in ("iterate", "cascade"):
        raise ValueError(f"unknown method {method!r}")
    net = spec.net
    if method == "iterate":
        grids = structured_grid(net, level)
        op = _operator(spec, grids)
        g, changes = _iterate(op, _seed(spec, grids), tol, max_iter)
    else:
        grids = structured_grid(net, 1)
        op = _operator(spec, grids)
        g, changes = _iterate(op, _seed(spec, grids), tol, max_iter)
        for lev in range(2, level + 1):
            grids = structured_grid(net, lev)
            op = _operator(spec, grids)
            embedded = np.zeros(tuple(gr.n for gr in grids))
            embedded[tuple(slice(None, None, gr.M) for gr in grids)] = g
            g = op.apply(embedded)
    residual = float(np.max(np.abs(op.apply(g) - g)))
    op_up = _operator(spec, grids, upper=True)
    stitch = float(np.max(np.abs(op.apply(g) - op_up.apply(g))))
    ratios = _ratios(changes)
    report = FixedPointReport(
        iterations=len(changes),
        sup_change=changes[-1],
        contraction_estimate=max(ratios) if ratios else 0.0,
        residual=residual,
        changes=changes,
        ratios=ratios,
        rate_bound=op.rate,
        stitch_mismatch=stitch,
        method=method,
    )
    return _surface(spec, grids, g), report


def build_fif(spec: FifSpec, level: int, tol: float = 1e-12, **kw):
    return build(spec, level, tol, **kw)


def build_alpha(spec: AlphaSpec, level: int, tol: float = 1e-12, **kw):
    return build(spec, level, tol, **kw)


def residual(spec, surface: SampledSurface) -> float:
    """``max |T(g) - g|`` over the grid: the self-referential equation defect."""
    L = grid_level(spec.net, surface.dims)
    grids = structured_grid(spec.net, L)
    g = np.asarray(surface.values)
    return float(np.max(np.abs(_operator(spec, grids).apply(g) - g)))


def stitch_mismatch(spec, surface: SampledSurface) -> float:
    """Largest disagreement at shared cell faces between the two adjacent cells' equations."""
    L = grid_level(spec.net, surface.dims)
    grids = structured_grid(spec.net, L)
    g = np.asarray(surface.values)
    lo = _operator(spec, grids).apply(g)
    hi = _operator(spec, grids, upper=True).apply(g)
    return float(np.max(np.abs(lo - hi)))


def axis_trace(spec: AlphaSpec, surface: SampledSurface, axis: int = 1):
    """Restriction of ``f^alpha`` to coordinate axis ``axis`` (1-based).

    The other coordinates are held at the lower box corner, where every
    first-cell map has its fixed point.  Returns the induced one-variable spec
    and the slice of ``surface`` (copied, not interpolated).
    """
    net = spec.net
    k = axis - 1
    if not 0 <= k < net.q:
        raise ValueError(f"axis {axis} outside 1..{net.q}")
    for j in range(net.q):
        if j != k and net.maps[j][0](0.0) != 0.0:
            raise SpecError(f"first map of axis {j + 1} does not fix 0")
    fixed = [lo for lo, _ in net.domain]
    idx = [0] * net.q
    idx[k] = slice(None)
    values = np.array(surface.values[tuple(idx)])
    sub_net = Net([net.axes[k]], [net.domain[k]])
    sub = AlphaSpec(
        sub_net,
        spec.germ.restrict(k, fixed),
        spec.base.restrict(k, fixed),
        _restrict_scale(spec.scale, k, fixed),
        scale_at=spec.scale_at,
        check=spec.check,
        samples_per_cell=spec.samples_per_cell,
    )
    trace = SampledSurface(values, (surface.axes[k],), [net.domain[k]], surface.level)
    return sub, trace


def _restrict_scale(scale: Field, k: int, fixed) -> Field:
    if isinstance(scale, ConstantField):
        return scale
    return scale.restrict(k, fixed)
