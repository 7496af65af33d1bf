"""Random scenario generators shared by the fixed-point and acceptance tests."""

import math

import numpy as np

from mfif.field import SampledSurface, parse
from mfif.fif import AlphaSpec, FifSpec, InterpolationData, build
from mfif.net import Net


def random_knots(rng, M, uniform):
    if uniform:
        return np.linspace(0.0, 1.0, M + 1)
    inner = np.sort(rng.uniform(0.1, 0.9, M - 1))
    while np.min(np.diff(np.concatenate([[0.0], inner, [1.0]]))) < 0.08:
        inner = np.sort(rng.uniform(0.1, 0.9, M - 1))
    return np.concatenate([[0.0], inner, [1.0]])


def random_net(rng, q):
    Ms = rng.integers(2, 5, size=q)
    uniform = bool(rng.integers(0, 2))
    return Net([random_knots(rng, int(M), uniform) for M in Ms])


GERMS = {
    1: ["sin(3*x1) + x1^2", "exp(-x1) * cos(5*x1)", "x1^3 - 2*x1"],
    2: ["sin(2*x1) * cos(3*x2) + x1*x2", "x1^2 - x2^3 + 0.5", "exp(x1 - x2)"],
    3: ["x1*x2 + sin(x3)", "cos(x1 + 2*x2 - x3)", "x1^2 + x2^2 + x3^2"],
}

# bumps vanishing at every corner of the unit box
BUMPS = {
    1: "x1*(1 - x1)",
    2: "x1*(1 - x1) + x2*(1 - x2)",
    3: "x1*(1 - x1)*x3 + x2*(1 - x2)",
}


def random_fif(rng, q):
    net = random_net(rng, q)
    z = rng.uniform(-2, 2, size=tuple(M + 1 for M in net.Ms))
    delta = float(rng.uniform(-0.9, 0.9))
    return FifSpec(InterpolationData(net, z), delta)


def random_alpha(rng, q):
    net = random_net(rng, q)
    germ = GERMS[q][int(rng.integers(len(GERMS[q])))]
    base = f"({germ}) + {rng.uniform(-3, 3):.4f}*({BUMPS[q]})"
    if rng.integers(0, 2):
        scale = float(rng.uniform(-0.9, 0.9))
    else:
        c = rng.uniform(0.1, 0.5)
        scale = f"{c:.4f} + {0.9 - c - 0.01:.4f}*x1*x{q}"
    return AlphaSpec(net, germ, base, scale)


LEVEL = {1: 7, 2: 4, 3: 3}


def level_for(spec):
    """Grid level keeping every random scenario below ~300k samples."""
    q = spec.net.q
    L = LEVEL[q]
    while np.prod([M ** L + 1 for M in spec.net.Ms]) > 300_000:
        L -= 1
    return L


def sampled(expr, n, q):
    return SampledSurface.from_field(parse(expr), [n] * q)


def brute_count(surface, m, M):
    """Boxes of side M^-m met by the sampled graph: per column, the value buckets spanned."""
    ncell = M ** m
    v = np.asarray(surface.values)
    r = [(n - 1) // ncell for n in surface.dims]
    total = 0
    for cell in np.ndindex(*(ncell,) * surface.q):
        block = v[tuple(slice(c * rk, (c + 1) * rk + 1) for c, rk in zip(cell, r))]
        lo = math.floor(block.min() * ncell)
        hi = math.floor(block.max() * ncell)
        total += hi - lo + 1
    return total


def sandwich_surfaces(rng):
    """Ten test surfaces: smooth, rough, one-variable and built fractal ones."""
    out = [sampled("x1 + x2", 33, 2), sampled("sin(9*x1)*cos(7*x2)", 33, 2),
           sampled("x1^2 - 3*x2", 33, 2), SampledSurface.uniform(rng.uniform(-1, 1, (33, 33))),
           SampledSurface.uniform(np.cumsum(rng.normal(size=(33, 33)), axis=0) * 0.2),
           sampled("sqrt(x1)", 65, 1), sampled("abs(x1 - 0.3)", 65, 1)]
    for q in (1, 2, 2):
        spec = random_alpha(rng, q)
        spec = AlphaSpec(Net.uniform([2] * q), spec.germ, spec.base, spec.scale)
        out.append(build(spec, 5 if q == 2 else 6)[0])
    return out
