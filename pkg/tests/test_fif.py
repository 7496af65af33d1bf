import itertools

import numpy as np
import pytest
from scipy.interpolate import RegularGridInterpolator

from helpers import level_for, random_alpha, random_fif
from mfif.fif import (AlphaSpec, DivergenceError, FifSpec, InterpolationData, SpecError, axis_trace,
                      build, corner_b_field, corner_b_values, knot_values, residual, rb_apply_fif,
                      stitch_mismatch, structured_grid)
from mfif.field import SampledSurface, parse
from mfif.net import Net, locate

FIG1_F = "41*(x2^3 - x1^5)^2 + (x2 - x1^2)^3"
FIG1_NET = Net.from_domain_knots([[-1, -0.5, 0, 0.5, 1]] * 2, [(-1, 1), (-1, 1)])


def hat_spec(delta=0.5):
    return FifSpec(InterpolationData(Net.uniform([2]), np.array([0.0, 1.0, 0.0])), delta)


# --- independent pointwise oracle -------------------------------------------


def _is_knot(net, x):
    idx = []
    for k, xk in enumerate(x):
        kn = net.knot_coords(k)
        j = np.flatnonzero(np.abs(kn - xk) < 1e-9)
        if not j.size:
            return None
        idx.append(int(j[0]))
    return tuple(idx)


def _b_by_hand(net, z, delta, cell, t):
    """Multilinear B of one cell from its corner constraints, written out directly."""
    total = 0.0
    for bits in itertools.product((0, 1), repeat=net.q):
        src, lab, w = [], [], 1.0
        for k, (i, b) in enumerate(zip(cell, bits)):
            M = net.Ms[k]
            odd = i % 2 == 1
            src.append((i if odd else i - 1) if b else (i - 1 if odd else i))
            lab.append(b * M)
            w *= t[k] if b else 1.0 - t[k]
        total += w * (z[tuple(src)] - delta * z[tuple(lab)])
    return total


def fif_oracle(spec, x, depth=40):
    """Evaluate the FIF at a grid point by unrolling its self-referential equation."""
    net, z = spec.net, spec.data.z
    k = _is_knot(net, x)
    if k is not None:
        return z[k]
    assert depth > 0
    cell = locate(net, np.clip(x, 0, 1))
    t = [net.maps[j][i - 1].inverse(xj) for j, (i, xj) in enumerate(zip(cell, x))]
    t = np.clip(t, 0.0, 1.0)
    return spec.delta * fif_oracle(spec, t, depth - 1) + _b_by_hand(net, z, spec.delta, cell, t)


def alpha_oracle(spec, x, depth=40):
    net = spec.net
    xo = net.denormalize(x)
    if _is_knot(net, x) is not None:
        return spec.germ(xo)
    assert depth > 0
    cell = locate(net, np.clip(x, 0, 1))
    t = np.clip([net.maps[j][i - 1].inverse(xj) for j, (i, xj) in enumerate(zip(cell, x))], 0, 1)
    to = net.denormalize(t)
    a = spec.scale(to) if spec.scale_at == "preimage" else spec.scale(xo)
    return spec.germ(xo) + a * (alpha_oracle(spec, t, depth - 1) - spec.base(to))


def _sample_points(grids, rng, n):
    idx = [rng.integers(0, g.n, size=n) for g in grids]
    return [tuple(i[j] for i in idx) for j in range(n)]


# --- corner B ----------------------------------------------------------------


def test_corner_b_examples():
    spec = hat_spec(0.0)
    assert corner_b_values(spec, (1,)) == pytest.approx([0.0, 1.0])
    assert corner_b_values(spec, (2,)) == pytest.approx([0.0, 1.0])
    assert corner_b_field(spec, (1,))((0.3,)) == pytest.approx(0.3)
    half = hat_spec(0.5)
    assert corner_b_values(half, (1,)) == pytest.approx([0.0, 1.0])


def test_corner_b_matches_hand_formula(rng):
    spec = random_fif(rng, 3)
    for cell in itertools.product(*[range(1, M + 1) for M in spec.net.Ms]):
        vals = corner_b_values(spec, cell)
        for bits in itertools.product((0, 1), repeat=3):
            assert vals[bits] == pytest.approx(_b_by_hand(spec.net, spec.data.z, spec.delta, cell, bits))


# --- operator and build ------------------------------------------------------


def test_one_application_to_zero():
    spec = hat_spec(0.5)
    zero = SampledSurface.uniform(np.zeros(5))
    out = rb_apply_fif(spec, zero)
    assert out.values == pytest.approx([0.0, 0.5, 1.0, 0.5, 0.0], abs=1e-15)


def test_delta_zero_is_multilinear_interpolant(rng):
    for q in (1, 2, 3):
        spec = random_fif(rng, q)
        spec = FifSpec(spec.data, 0.0)
        surface, rep = build(spec, level_for(spec))
        assert rep.iterations == 1
        knots = tuple(spec.net.knot_coords(k) for k in range(q))
        oracle = RegularGridInterpolator(knots, spec.data.z)
        pts = np.stack(np.meshgrid(*surface.axes, indexing="ij"), axis=-1)
        assert np.max(np.abs(oracle(pts) - surface.values)) <= 1e-13


def test_constant_data_is_fixed():
    net = Net.uniform([3, 2])
    spec = FifSpec(InterpolationData(net, np.full((4, 3), 3.0)), 0.7)
    surface, rep = build(spec, 4)
    assert np.max(np.abs(surface.values - 3.0)) <= 1e-14
    assert residual(spec, surface) <= 1e-14


def test_hat_fif_interpolates():
    spec = hat_spec(0.5)
    surface, rep = build(spec, 6)
    assert knot_values(surface, spec.net) == pytest.approx([0.0, 1.0, 0.0], abs=1e-10)
    assert rep.residual <= 1e-12


@pytest.mark.parametrize("q", [1, 2, 3])
def test_fif_matches_pointwise_oracle(q, rng):
    spec = random_fif(rng, q)
    surface, _ = build(spec, level_for(spec))
    grids = structured_grid(spec.net, surface.level)
    for idx in _sample_points(grids, rng, 40):
        x = [g.coords[i] for g, i in zip(grids, idx)]
        assert surface.values[idx] == pytest.approx(fif_oracle(spec, x), abs=1e-10)


@pytest.mark.parametrize("q", [1, 2])
def test_alpha_matches_pointwise_oracle(q, rng):
    spec = random_alpha(rng, q)
    surface, _ = build(spec, level_for(spec))
    grids = structured_grid(spec.net, surface.level)
    for idx in _sample_points(grids, rng, 40):
        x = [g.coords[i] for g, i in zip(grids, idx)]
        assert surface.values[idx] == pytest.approx(alpha_oracle(spec, x), abs=1e-10)


def test_image_scaling_matches_oracle(rng):
    net = Net.uniform([3, 2])
    spec = AlphaSpec(net, "sin(x1) + x2", "sin(x1) + x2 + x1*(1 - x1)", "0.2 + 0.5*x1*x2",
                     scale_at="image")
    surface, _ = build(spec, 4)
    grids = structured_grid(net, 4)
    for idx in _sample_points(grids, rng, 30):
        x = [g.coords[i] for g, i in zip(grids, idx)]
        assert surface.values[idx] == pytest.approx(alpha_oracle(spec, x), abs=1e-10)


@pytest.mark.parametrize("q", [1, 2, 3])
def test_cascade_equals_iteration(q, rng):
    spec = random_alpha(rng, q) if q != 3 else random_fif(rng, q)
    L = level_for(spec)
    a, _ = build(spec, L)
    b, _ = build(spec, L, method="cascade")
    assert np.max(np.abs(a.values - b.values)) <= 1e-12


@pytest.mark.parametrize("q", [1, 2, 3])
def test_stitching_and_contraction(q, rng):
    for spec in (random_fif(rng, q), random_alpha(rng, q)):
        surface, rep = build(spec, level_for(spec))
        assert rep.stitch_mismatch <= 1e-12
        assert stitch_mismatch(spec, surface) <= 1e-12
        assert all(r <= rep.rate_bound + 1e-9 for r in rep.ratios)


def test_divergence_error_when_capped():
    spec = AlphaSpec(Net.uniform([2]), "x1", "x1 + 1", 0.95, check="none")
    with pytest.raises(DivergenceError):
        build(spec, 3, max_iter=5)


def test_slow_contraction_gets_enough_iterations():
    # corner mismatch at the fixed corner makes the change decay like alpha^n
    spec = AlphaSpec(Net.uniform([2]), "x1", "x1 + 1", 0.95, check="none")
    surface, rep = build(spec, 3)
    assert rep.iterations > 200
    assert rep.residual <= 1e-10


# --- alpha-fractal collapses ----------------------------------------------------


def test_zero_scaling_returns_germ():
    net = Net.uniform([3, 3], [(-1, 2), (0, 1)])
    f = parse("sin(3*x1)*exp(x2)")
    spec = AlphaSpec(net, f, "x1*x2", 0.0, check="none")
    surface, _ = build(spec, 3)
    grids = structured_grid(net, 3)
    want = f.on_grid([net.denormalize_axis(k, g.coords) for k, g in enumerate(grids)])
    assert np.max(np.abs(surface.values - want)) <= 1e-13


def test_base_equal_germ_returns_germ():
    net = Net.uniform([2, 4])
    f = "cos(x1 + x2^2)"
    spec = AlphaSpec(net, f, f, "0.4 + 0.4*x1")
    surface, _ = build(spec, 3)
    grids = structured_grid(net, 3)
    want = parse(f).on_grid([net.denormalize_axis(k, g.coords) for k, g in enumerate(grids)])
    assert np.max(np.abs(surface.values - want)) <= 1e-13


def test_spec_validation():
    net = Net.uniform([2])
    with pytest.raises(SpecError):
        AlphaSpec(net, "x1", "x1 + 1", 0.5)  # corners differ
    with pytest.raises(SpecError):
        AlphaSpec(net, "x1", "x1", 1.0)
    with pytest.raises(SpecError):
        AlphaSpec(net, "x1", "x1", "x2")  # two variables on a one-axis net
    with pytest.raises(SpecError):
        FifSpec(InterpolationData(net, np.zeros(3)), 1.0)
    with pytest.raises(ValueError):
        InterpolationData(net, np.zeros(4))
    strict = AlphaSpec(Net.uniform([2, 2]), "x1", "x1 + x1*(1 - x1)*x2", 0.3)
    assert strict.corner_mismatch == 0.0
    with pytest.raises(SpecError):
        AlphaSpec(Net.uniform([2, 2]), "x1", "x1 + x1*(1 - x1)*x2", 0.3, check="strict")


# --- the two-variable example ----------------------------------------------------


def fig1_spec(alpha, check="none"):
    return AlphaSpec(FIG1_NET, FIG1_F, f"x1^3*x2^5*({FIG1_F})", alpha, check=check)


def test_fig1_base_breaks_corner_condition():
    # s = x^3 y^5 f differs from f at (-1, 1) and (1, -1)
    with pytest.raises(SpecError):
        fig1_spec(0.5, check="corners")
    assert fig1_spec(0.5).corner_mismatch == pytest.approx(328.0)


def test_fig1_knot_errors_follow_corner_mismatch():
    spec = fig1_spec(0.5)
    surface, rep = build(spec, 4)
    assert rep.residual <= 1e-10
    f = parse(FIG1_F)
    s = parse(f"x1^3*x2^5*({FIG1_F})")
    err = knot_values(surface, FIG1_NET) - f.on_grid([np.linspace(-1, 1, 5)] * 2)
    # a knot's value is alpha*(f - s) at the box corner its preimage lands on
    for i, j in np.ndindex(5, 5):
        ci = -1.0 if (i % 2 == 0) else 1.0
        cj = -1.0 if (j % 2 == 0) else 1.0
        # interior knots of even index come from corner 1 (odd cell, upper end)
        want = 0.5 * (f((ci, cj)) - s((ci, cj)))
        assert err[i, j] == pytest.approx(want, abs=1e-8)
    assert np.sum(np.abs(err) < 1e-8) == 13


def test_fig1_residual():
    surface, rep = build(fig1_spec(0.5), 5)
    assert residual(fig1_spec(0.5), surface) <= 1e-10


# --- axis restriction ----------------------------------------------------------


def test_trace_of_paraboloid():
    net = Net.uniform([4, 4])
    spec = AlphaSpec(net, "x1^2 + x2^2", "x1^2 + x2^2", 0.0)
    surface, _ = build(spec, 3)
    sub, trace = axis_trace(spec, surface, 1)
    x = np.linspace(0, 1, 65)
    assert trace.values == pytest.approx(x ** 2, abs=1e-14)
    assert sub.germ((0.3,)) == pytest.approx(0.09)


def test_trace_is_a_slice_and_self_referential():
    spec = fig1_spec(0.5)
    surface, _ = build(spec, 4)
    for axis in (1, 2):
        sub, trace = axis_trace(spec, surface, axis)
        sl = surface.values[:, 0] if axis == 1 else surface.values[0, :]
        assert np.array_equal(trace.values, sl)
        assert trace.values[0] == surface.values[0, 0]
        assert residual(sub, trace) <= 1e-10
        # every trace sample is a graph sample of the surface
        assert set(trace.values.tolist()) <= set(surface.values.ravel().tolist())


def test_trace_axis_range():
    spec = fig1_spec(0.5)
    surface, _ = build(spec, 2)
    with pytest.raises(ValueError):
        axis_trace(spec, surface, 3)
