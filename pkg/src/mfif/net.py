"""Nets on the unit hypercube and the affine contractions attached to them.

Indices follow the usual 1-based convention for subintervals: cell ``i`` of an
axis is ``[x[i-1], x[i]]`` for ``i = 1..M``.  Odd cells are mapped
orientation-preserving, even cells orientation-reversing, which is what makes
neighbouring cells agree on their shared knot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class PartitionError(ValueError):
    """Raised for invalid knot partitions or nets."""


class DomainError(ValueError):
    """Raised when a point lies outside the box it is supposed to be in."""


@dataclass(frozen=True)
class AffineMap:
    """One-dimensional map ``x -> a*x + b``."""

    a: float
    b: float

    @property
    def ratio(self) -> float:
        return abs(self.a)

    def __call__(self, x):
        return self.a * x + self.b

    def inverse(self, y):
        return (y - self.b) / self.a

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Return ``self o inner``."""
        return AffineMap(self.a * inner.a, self.a * inner.b + self.b)


@dataclass(frozen=True)
class AxisPartition:
    knots: tuple[float, ...]

    def __init__(self, knots: Sequence[float]):
        k = tuple(float(v) for v in knots)
        object.__setattr__(self, "knots", k)
        if len(k) < 3:
            raise PartitionError(f"need at least 2 subintervals, got {len(k) - 1}")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise PartitionError(f"knots must start at 0 and end at 1, got {k[0]}..{k[-1]}")
        if any(b <= a for a, b in zip(k, k[1:])):
            raise PartitionError(f"knots must be strictly increasing: {k}")

    @classmethod
    def uniform(cls, M: int) -> "AxisPartition":
        return cls(np.linspace(0.0, 1.0, M + 1))

    @property
    def M(self) -> int:
        return len(self.knots) - 1

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(np.diff(self.knots), 1.0 / self.M, rtol=0, atol=1e-14))


def build_affine_maps(p: AxisPartition) -> list[AffineMap]:
    """Contractions ``u_i`` of ``[0, 1]`` onto the subintervals of ``p``.

    Odd ``i``: ``u(0) = x[i-1]``, ``u(1) = x[i]``; even ``i``: ``u(0) = x[i]``,
    ``u(1) = x[i-1]``.  Coefficients come straight from those two endpoint
    equations.
    """
    maps = []
    x = p.knots
    for i in range(1, p.M + 1):
        lo, hi = x[i - 1], x[i]
        if hi - lo <= 0.0:
            raise PartitionError(f"degenerate subinterval {i}: [{lo}, {hi}]")
        if i % 2 == 1:
            maps.append(AffineMap(hi - lo, lo))
        else:
            maps.append(AffineMap(lo - hi, hi))
    return maps


def eta(i: int, k: int, M: int) -> int:
    """Knot index that cell ``i`` sends the corner label ``k`` (0 or ``M``) to."""
    if i < 1:
        raise ValueError(f"cell index must be >= 1, got {i}")
    if k not in (0, M):
        raise ValueError(f"corner label must be 0 or {M}, got {k}")
    at_end = k == M
    if i % 2 == 1:
        return i if at_end else i - 1
    return i - 1 if at_end else i


@dataclass(frozen=True)
class Net:
    """Product of per-axis partitions plus the original (pre-normalisation) box."""

    axes: tuple[AxisPartition, ...]
    domain: tuple[tuple[float, float], ...]
    maps: tuple[tuple[AffineMap, ...], ...] = field(init=False, repr=False, compare=False)

    def __init__(self, axes, domain=None):
        axes = tuple(a if isinstance(a, AxisPartition) else AxisPartition(a) for a in axes)
        if not axes:
            raise PartitionError("a net needs at least one axis")
        if domain is None:
            domain = [(0.0, 1.0)] * len(axes)
        domain = tuple((float(lo), float(hi)) for lo, hi in domain)
        if len(domain) != len(axes):
            raise PartitionError(f"domain has {len(domain)} intervals for {len(axes)} axes")
        for k, (lo, hi) in enumerate(domain):
            if not lo < hi:
                raise PartitionError(f"domain interval {k + 1} is degenerate: [{lo}, {hi}]")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "maps", tuple(tuple(build_affine_maps(a)) for a in axes))

    @classmethod
    def uniform(cls, Ms: Sequence[int], domain=None) -> "Net":
        return cls([AxisPartition.uniform(M) for M in Ms], domain)

    @classmethod
    def from_domain_knots(cls, knots: Sequence[Sequence[float]], domain) -> "Net":
        """Build a net from knots given in original coordinates."""
        axes = []
        for k, (kn, (lo, hi)) in enumerate(zip(knots, domain)):
            kn = np.asarray(kn, dtype=float)
            t = (kn - lo) / (hi - lo)
            # exact endpoints even when (hi - lo) does not divide cleanly
            t[0] = 0.0 if np.isclose(kn[0], lo) else t[0]
            t[-1] = 1.0 if np.isclose(kn[-1], hi) else t[-1]
            axes.append(AxisPartition(t))
        return cls(axes, domain)

    @property
    def q(self) -> int:
        return len(self.axes)

    @property
    def Ms(self) -> tuple[int, ...]:
        return tuple(a.M for a in self.axes)

    @property
    def min_ratio(self) -> float:
        """Smallest contraction ratio over all axes and cells."""
        return min(m.ratio for axis in self.maps for m in axis)

    def knot_coords(self, k: int) -> np.ndarray:
        return np.asarray(self.axes[k].knots)

    def normalize(self, x):
        lo, hi = self._bounds()
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def denormalize(self, t):
        lo, hi = self._bounds()
        return lo + np.asarray(t, dtype=float) * (hi - lo)

    def denormalize_axis(self, k: int, t):
        lo, hi = self.domain[k]
        return lo + np.asarray(t, dtype=float) * (hi - lo)

    def _bounds(self):
        d = np.asarray(self.domain, dtype=float)
        return d[:, 0], d[:, 1]


def normalize(domain, x):
    d = np.asarray(domain, dtype=float)
    return (np.asarray(x, dtype=float) - d[:, 0]) / (d[:, 1] - d[:, 0])


def denormalize(domain, t):
    d = np.asarray(domain, dtype=float)
    return d[:, 0] + np.asarray(t, dtype=float) * (d[:, 1] - d[:, 0])


def locate(net: Net, x) -> tuple[int, ...]:
    """Cell multi-index (1-based) of a point of ``[0, 1]^q``.

    Shared boundaries go to the lower cell; the last cell also owns ``1``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != net.q:
        raise DomainError(f"point has {x.size} coordinates, net has {net.q} axes")
    out = []
    for k, xk in enumerate(x):
        if not 0.0 <= xk <= 1.0:
            raise DomainError(f"coordinate {k + 1} = {xk} outside [0, 1]")
        knots = net.knot_coords(k)
        i = int(np.searchsorted(knots, xk, side="left"))
        out.append(max(i, 1))
    return tuple(out)


@dataclass(frozen=True)
class CellAddress:
    """Per-axis words of cell letters, all of the same depth."""

    words: tuple[tuple[int, ...], ...]

    def __init__(self, words):
        words = tuple(tuple(int(c) for c in w) for w in words)
        depths = {len(w) for w in words}
        if len(depths) != 1:
            raise ValueError(f"all axes must share one depth, got {sorted(depths)}")
        object.__setattr__(self, "words", words)

    @property
    def depth(self) -> int:
        return len(self.words[0])


def compose_word(maps: Sequence[AffineMap], word: Sequence[int]) -> AffineMap:
    """``u_{w1} o u_{w2} o ... o u_{wm}`` for one axis."""
    out = AffineMap(1.0, 0.0)
    for letter in word:
        if not 1 <= letter <= len(maps):
            raise ValueError(f"letter {letter} outside 1..{len(maps)}")
        out = out.compose(maps[letter - 1])
    return out


def compose_address(net: Net, addr: CellAddress):
    """Composed per-axis maps of an address and the sub-box they map ``[0,1]^q`` to."""
    if len(addr.words) != net.q:
        raise ValueError(f"address has {len(addr.words)} axes, net has {net.q}")
    comps = [compose_word(net.maps[k], w) for k, w in enumerate(addr.words)]
    box = []
    for c in comps:
        lo, hi = sorted((c(0.0), c(1.0)))
        box.append((lo, hi))
    return comps, tuple(box)
