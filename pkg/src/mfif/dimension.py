"""Oscillations, box counts, dimension fits and Hoelder estimates for sampled graphs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats

from .field import ConstantField, Field, GridField, SampledSurface, as_field, sup_norm
from .fif import AlphaSpec, grid_level, structured_grid
from .net import Net

# relative slack for ceilings: M^m * Osc is often an integer up to rounding
CEIL_SLACK = 1e-9


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class OscillationTable:
    level: int
    M: int
    osc: np.ndarray  # shape (M**level,)*q

    @property
    def q(self) -> int:
        return self.osc.ndim


@dataclass(frozen=True)
class BoxCountResult:
    level: int
    delta: float
    lower: int
    upper: int

    @property
    def chosen(self) -> int:
        return self.lower


@dataclass(frozen=True)
class DimensionFit:
    slope: float
    stderr: float
    intercept: float
    slope_upper: float
    stderr_upper: float
    levels: tuple[int, ...]


@dataclass(frozen=True)
class TheoreticalBounds:
    cases: tuple[str, ...]
    case_bounds: dict
    upper: float
    lower: int
    clamped: bool = False


@dataclass
class DimensionReport:
    counts: list[BoxCountResult]
    fit: DimensionFit
    lower_bound: int
    theory: TheoreticalBounds | None = None
    holder: dict | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {
            "levels": [c.level for c in self.counts],
            "N_lower": [c.lower for c in self.counts],
            "N_upper": [c.upper for c in self.counts],
            "fitted_slope": self.fit.slope,
            "fitted_slope_stderr": self.fit.stderr,
            "fitted_slope_upper_counts": self.fit.slope_upper,
            "lower_bound": self.lower_bound,
        }
        if self.theory is not None:
            d["theoretical_cases"] = list(self.theory.cases)
            d["theoretical_case_bounds"] = self.theory.case_bounds
            d["theoretical_upper_bound"] = self.theory.upper
            d["theoretical_bound_clamped"] = self.theory.clamped
        if self.holder is not None:
            d["holder_check"] = self.holder
        if self.notes:
            d["notes"] = list(self.notes)
        return d


@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    constant: float
    pairs: int
    flat: bool = False
    raw_slope: float = float("nan")


# --- oscillation and counting ---------------------------------------------


def _block_reduce(v: np.ndarray, rs: Sequence[int], ncell: int, reducer) -> np.ndarray:
    # closed blocks share their boundary samples, so windows overlap by one
    for axis, r in enumerate(rs):
        win = sliding_window_view(v, r + 1, axis=axis)
        win = np.take(win, np.arange(ncell) * r, axis=axis)
        v = reducer(win, axis=-1)
    return v


def oscillation_table(surface: SampledSurface, m: int, M: int) -> OscillationTable:
    """``max - min`` of the samples in each closed cell of the ``M**m`` mesh."""
    if not surface.is_uniform():
        raise ValueError("oscillation tables need a uniformly sampled surface")
    ncell = M ** m
    for n in surface.dims:
        if (n - 1) % ncell:
            raise ValueError(f"axis size {n} - 1 is not a multiple of {ncell}")
    v = np.asarray(surface.values)
    rs = [(n - 1) // ncell for n in surface.dims]
    mx = _block_reduce(v, rs, ncell, np.max)
    mn = _block_reduce(v, rs, ncell, np.min)
    return OscillationTable(m, M, mx - mn)


def _ceil(x: np.ndarray) -> np.ndarray:
    return np.ceil(x - CEIL_SLACK * np.maximum(1.0, x))


def box_count(osc: OscillationTable) -> BoxCountResult:
    """Lower and upper cuboid counts of the graph from per-column oscillations."""
    scale = float(osc.M) ** osc.level
    k = _ceil(scale * osc.osc).astype(np.int64)
    lower = int(np.maximum(k, 1).sum())
    upper = int(osc.osc.size + k.sum())
    return BoxCountResult(osc.level, 1.0 / scale, lower, upper)


def box_counts(surface: SampledSurface, M: int, levels: Sequence[int]) -> list[BoxCountResult]:
    return [box_count(oscillation_table(surface, m, M)) for m in levels]


def dimension_fit(results: Sequence[BoxCountResult]) -> DimensionFit:
    """Least-squares slope of ``log N`` against ``-log delta``."""
    if len(results) < 3:
        raise InsufficientDataError(f"need at least 3 levels, got {len(results)}")
    x = np.array([-math.log(r.delta) for r in results])
    lo = stats.linregress(x, np.log([r.lower for r in results]))
    hi = stats.linregress(x, np.log([r.upper for r in results]))
    return DimensionFit(lo.slope, lo.stderr, lo.intercept, hi.slope, hi.stderr,
                        tuple(r.level for r in results))


def required_level(net: Net, M: int, m_max: int) -> int:
    """Smallest grid level whose uniform grid resolves the ``M**m_max`` mesh."""
    if len(set(net.Ms)) != 1 or not all(a.is_uniform for a in net.axes):
        raise ValueError("box counting on built surfaces needs uniform nets with equal M_k")
    Mk = net.Ms[0]
    L = 1
    while (Mk ** L) % (M ** m_max):
        L += 1
        if L > 64:
            raise ValueError(f"mesh {M} is incompatible with partition count {Mk}")
    return L


def mesh_compatible(surface: SampledSurface, M: int, m_max: int) -> bool:
    return surface.is_uniform() and all((n - 1) % M ** m_max == 0 for n in surface.dims)


def resample_for_mesh(surface: SampledSurface, M: int, m_max: int) -> SampledSurface:
    """Multilinear resampling onto a uniform grid that the ``M**m_max`` mesh divides.

    The new grid is at least as fine as the densest axis of ``surface``.
    Surfaces that already fit are returned unchanged.
    """
    if mesh_compatible(surface, M, m_max):
        return surface
    base = M ** m_max
    k = max(1, math.ceil((max(surface.dims) - 1) / base))
    n = base * k + 1
    axes = [np.linspace(0.0, 1.0, n)] * surface.q
    orig = [lo + a * (hi - lo) for a, (lo, hi) in zip(axes, surface.domain)]
    return SampledSurface(GridField(surface).on_grid(orig), tuple(axes), surface.domain)


# --- scaling statistics and theory ---------------------------------------


def gamma_bar(alpha, net: Net, samples_per_cell: int = 9) -> float:
    """Sum over cells of the sampled cell maxima of ``|alpha|``."""
    _, table = sup_norm(as_field(alpha), net, samples_per_cell)
    return float(table.sum())


def alpha_range(alpha, net: Net, samples_per_cell: int = 9):
    """Sampled ``(min |alpha|, max |alpha|)`` over the box."""
    alpha = as_field(alpha)
    if isinstance(alpha, ConstantField):
        return abs(alpha.value), abs(alpha.value)
    axes = [net.denormalize_axis(k, np.linspace(0, 1, samples_per_cell * M + 1))
            for k, M in enumerate(net.Ms)]
    v = np.abs(alpha.on_grid(axes))
    return float(v.min()), float(v.max())


def theoretical_bounds(q: int, M: int, M1: int, sigma: float, alpha_min: float,
                       alpha_max: float, gamma_bar: float | None = None) -> TheoreticalBounds:
    """Upper bounds on the box dimension of the graph of ``f^alpha``.

    Cases: (i) ``alpha_min > M1**-sigma``: ``1 + log(gamma_bar)/log(M)``;
    (ii) ``M1**-sigma < alpha_max < 1``: ``q + 1 + log(alpha_max)/log(M)``;
    (iii) ``alpha_max <= M1**-sigma``: ``q + 1 - sigma``.  When (i) and (ii)
    both apply the smaller bound is reported.  Case (i) is clamped at ``q``.
    """
    if not 0 < sigma <= 1:
        raise ValueError(f"sigma must lie in (0, 1], got {sigma}")
    if alpha_min > alpha_max:
        raise ValueError(f"alpha_min {alpha_min} exceeds alpha_max {alpha_max}")
    if not (0 <= alpha_min and alpha_max < 1):
        raise ValueError("need 0 <= alpha_min <= alpha_max < 1")
    if M < 2 or M1 < 2:
        raise ValueError("mesh sizes must be >= 2")
    threshold = 1.0 / M1 ** sigma
    log2M = math.log2(M)
    cases, bounds, clamped = [], {}, False
    if alpha_min > threshold and gamma_bar is not None:
        b = 1.0 + math.log2(gamma_bar) / log2M
        if b < q:
            b, clamped = float(q), True
        cases.append("i")
        bounds["i"] = b
    if threshold < alpha_max < 1:
        cases.append("ii")
        bounds["ii"] = q + 1.0 + math.log2(alpha_max) / log2M
    if alpha_max <= threshold:
        cases.append("iii")
        bounds["iii"] = q + 1.0 - sigma
    return TheoreticalBounds(tuple(cases), bounds, min(bounds.values()), q, clamped)


def spec_bounds(spec: AlphaSpec, sigma: float = 1.0, M: int | None = None,
                M1: int | None = None) -> TheoreticalBounds:
    net = spec.net
    M = M or max(net.Ms)
    M1 = M1 or max(net.Ms)
    a_min, a_max = alpha_range(spec.scale, net, spec.samples_per_cell)
    return theoretical_bounds(net.q, M, M1, sigma, a_min, a_max,
                              gamma_bar(spec.scale, net, spec.samples_per_cell))


# --- Hoelder machinery ----------------------------------------------------


def _lag_pairs(surface: SampledSurface, pair_budget: int, seed: int):
    """Per-lag maxima of ``|f(x) - f(y)|`` over axis-aligned sample pairs.

    Returns ``(distances, max_diffs, n_pairs)`` with one entry per lag.
    """
    rng = np.random.default_rng(seed)
    v = np.asarray(surface.values)
    bins: dict[int, list] = {}
    n_pairs = 0
    for axis, coords in enumerate(surface.axes):
        n = len(coords)
        if n < 2:
            continue
        lags = np.unique(np.round(np.geomspace(1, n - 1, min(n - 1, 32))).astype(int))
        vv = np.moveaxis(v, axis, 0).reshape(n, -1)
        for lag in lags:
            starts = np.arange(n - lag)
            if starts.size * vv.shape[1] > pair_budget:
                keep = max(1, pair_budget // vv.shape[1])
                pick = rng.choice(starts[1:-1], size=min(keep, max(starts.size - 2, 0)), replace=False) \
                    if starts.size > 2 else np.array([], dtype=int)
                starts = np.unique(np.concatenate([[starts[0], starts[-1]], pick]))
            diff = np.abs(vv[starts + lag] - vv[starts])
            dist = coords[starts + lag] - coords[starts]
            n_pairs += diff.size
            entry = bins.setdefault(int(lag), [0.0, []])
            entry[0] = max(entry[0], float(diff.max()))
            entry[1].append(dist)
    dists = np.array([np.exp(np.mean(np.log(np.concatenate(b[1])))) for b in bins.values()])
    maxd = np.array([b[0] for b in bins.values()])
    order = np.argsort(dists)
    return dists[order], maxd[order], n_pairs


def holder_fit(surface: SampledSurface, pair_budget: int = 20000, seed: int = 0) -> HolderEstimate:
    """Hoelder exponent from the log-log slope of the largest increment per distance."""
    if pair_budget < 1000:
        raise ValueError("pair_budget must be >= 1000")
    dists, maxd, n = _lag_pairs(surface, pair_budget, seed)
    scale = max(1.0, float(np.max(np.abs(surface.values))))
    ok = maxd > 1e-14 * scale
    if ok.sum() < 2:
        return HolderEstimate(float("nan"), 0.0, n, flat=True)
    res = stats.linregress(np.log(dists[ok]), np.log(maxd[ok]))
    sigma = float(min(max(res.slope, 1e-6), 1.0))
    K = float(np.max(maxd[ok] / dists[ok] ** sigma))
    return HolderEstimate(sigma, K, n, flat=False, raw_slope=float(res.slope))


def holder_seminorm(surface: SampledSurface, sigma: float, pair_budget: int = 20000,
                    seed: int = 0) -> float:
    """Sampled ``sup |f(x) - f(y)| / |x - y|**sigma`` over axis-aligned pairs."""
    dists, maxd, _ = _lag_pairs(surface, pair_budget, seed)
    return float(np.max(maxd / dists ** sigma)) if dists.size else 0.0


def holder_constant(surface: SampledSurface, sigma: float, max_points: int = 4000) -> float:
    """Brute-force ``max |f(x) - f(y)| / |x - y|**sigma`` over all sample pairs."""
    pts = np.stack(np.meshgrid(*surface.axes, indexing="ij"), axis=-1).reshape(-1, surface.q)
    vals = np.asarray(surface.values).reshape(-1)
    if len(vals) > max_points:
        raise ValueError(f"{len(vals)} samples exceed max_points={max_points}")
    best = 0.0
    for i in range(len(vals) - 1):
        d = np.sqrt(((pts[i + 1:] - pts[i]) ** 2).sum(axis=1))
        r = np.abs(vals[i + 1:] - vals[i]) / d ** sigma
        best = max(best, float(r.max()))
    return best


@dataclass(frozen=True)
class HolderCheck:
    ok: bool
    scaled_sup: float  # ||alpha||_inf / a**sigma
    holder_norm: float  # ||alpha||_inf + [alpha]_sigma
    alpha_sup: float
    seminorm: float
    a: float

    def as_dict(self) -> dict:
        return {"ok": self.ok, "scaled_sup": self.scaled_sup, "holder_norm": self.holder_norm,
                "alpha_sup": self.alpha_sup, "seminorm": self.seminorm, "a": self.a}


def holder_contraction_check(alpha, sigma: float, net: Net | None = None, a: float | None = None,
                             samples: int = 257) -> HolderCheck:
    """Test ``max(||alpha||_inf / a**sigma, ||alpha||_inf + [alpha]_sigma) < 1``.

    ``a`` defaults to the smallest contraction ratio of ``net``.  The
    seminorm is measured on a uniform sample of ``alpha`` in normalised
    coordinates; constant scalings have seminorm 0.
    """
    alpha = as_field(alpha)
    if a is None:
        if net is None:
            raise ValueError("give either a net or the ratio a")
        a = net.min_ratio
    if isinstance(alpha, ConstantField):
        sup, semi = abs(alpha.value), 0.0
    else:
        if net is None:
            raise ValueError("a non-constant alpha needs a net to sample on")
        surf = SampledSurface.from_field(alpha, [samples] * net.q, net.domain)
        sup = float(np.max(np.abs(surf.values)))
        semi = holder_seminorm(surf, sigma)
    scaled = sup / a ** sigma
    norm = sup + semi
    return HolderCheck(bool(max(scaled, norm) < 1), scaled, norm, sup, semi, float(a))


def oscillation_recursion_check(spec: AlphaSpec, surface: SampledSurface, m: int, sigma: float,
                                K_f: float, K_s: float, K_alpha: float = 0.0) -> float:
    """Largest ``lhs - rhs`` of the one-step oscillation recursion over depth-``m`` cells.

    ``lhs = Osc(f^alpha, D_w)`` and
    ``rhs = abar_{w1} Osc(f^alpha, D_{w2..wm}) + (K*/M^(m sigma) + abar K_s/M^((m-1) sigma)) q^(sigma/2)``
    with ``K* = K_alpha (||f^alpha|| + ||s||) + K_f``.  Non-positive means the
    inequality holds on every cell.  Needs a uniform net with one ``M`` on all axes.
    """
    net = spec.net
    if len(set(net.Ms)) != 1:
        raise ValueError("recursion check needs the same M on every axis")
    M = net.Ms[0]
    q = net.q
    L = grid_level(net, surface.dims)
    if not 1 <= m <= L:
        raise ValueError(f"depth {m} outside 1..{L}")
    grids = structured_grid(net, L)
    v = np.asarray(surface.values)
    orig = [net.denormalize_axis(k, g.coords) for k, g in enumerate(grids)]
    s_sup = float(np.max(np.abs(spec.base.on_grid(orig))))
    K_star = K_alpha * (float(np.max(np.abs(v))) + s_sup) + K_f
    _, abar = sup_norm(spec.scale, net, spec.samples_per_cell)
    r = M ** (L - m)  # grid points per depth-m cell edge
    N = M ** (L - 1)
    ncell = M ** m
    extra = (K_star / M ** (m * sigma) + 0.0) * q ** (sigma / 2)
    worst = -np.inf
    for cell in np.ndindex(*(ncell,) * q):
        blocks, tails, first = [], [], []
        for c in cell:
            j0, j1 = c * r, (c + 1) * r
            w1 = c // M ** (m - 1) + 1
            a0, a1 = j0 - (w1 - 1) * N, j1 - (w1 - 1) * N
            p0, p1 = (a0 * M, a1 * M) if w1 % 2 == 1 else ((N - a0) * M, (N - a1) * M)
            blocks.append(slice(j0, j1 + 1))
            tails.append(slice(min(p0, p1), max(p0, p1) + 1))
            first.append(w1 - 1)
        child = v[tuple(blocks)]
        parent = v[tuple(tails)]
        ab = float(abar[tuple(first)])
        lhs = float(child.max() - child.min())
        rhs = ab * float(parent.max() - parent.min()) + extra \
            + ab * K_s / M ** ((m - 1) * sigma) * q ** (sigma / 2)
        worst = max(worst, lhs - rhs)
    return float(worst)


# --- reports ---------------------------------------------------------------


def measure_dimension(surface: SampledSurface, M: int, levels: Sequence[int],
                      theory: TheoreticalBounds | None = None) -> DimensionReport:
    counts = box_counts(surface, M, levels)
    return DimensionReport(counts, dimension_fit(counts), surface.q, theory)


def write_loglog_csv(path, results: Sequence[BoxCountResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "delta", "N_lower", "N_upper"])
        for r in results:
            w.writerow([r.level, repr(r.delta), r.lower, r.upper])
