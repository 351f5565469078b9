import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, spatial

from optauction.analytic import (
    MV_BUNDLE,
    MV_PRICE,
    MV_REVENUE,
    OneDimProblem,
    full_surplus,
    hinge_integral,
    inverse_cdf,
    ironed_virtual,
    manelli_vincent,
    manelli_vincent_revenue,
    myerson_revenue,
    selling_separately,
    separate_sale_infeasible,
    virtual_value,
)
from optauction.grid import Density1D

U = Density1D.uniform()
MIX = Density1D.normal_mixture((0.5, 0.5), (0.2, 0.8), (0.07, 0.07))


def sample(d, size, rng):
    """Rejection sampling from a density on [0, 1]."""
    xs = np.linspace(0, 1, 4001)
    top = 1.05 * float(d.pdf(xs).max())
    out = np.empty(0)
    while out.size < size:
        x = rng.random(2 * size)
        keep = rng.random(2 * size) * top < d.pdf(x)
        out = np.concatenate([out, x[keep]])
    return out[:size]


def second_price_revenue(values, reserve):
    """Second-price auction with a reserve, bidders along axis 1."""
    v = np.sort(values, axis=1)
    top, second = v[:, -1], v[:, -2] if v.shape[1] > 1 else np.zeros(len(v))
    return np.where(top >= reserve, np.maximum(second, reserve), 0.0)


def test_virtual_value_uniform():
    prob = OneDimProblem(U)
    assert virtual_value(prob, 0.75) == pytest.approx(0.5)
    assert virtual_value(prob, 0.5) == pytest.approx(0.0)
    for d in (U, MIX, Density1D.linear(0.8)):
        assert virtual_value(OneDimProblem(d), 1.0) == pytest.approx(1.0)


def test_problem_validation():
    with pytest.raises(ValueError):
        OneDimProblem(U, resolution=100)
    with pytest.raises(ValueError):
        OneDimProblem(Density1D.linear(2.0))  # pdf vanishes at 0
    with pytest.raises(ValueError):
        OneDimProblem(U, B=0)


def test_inverse_cdf():
    d = Density1D.power(2.0)
    t = np.linspace(0, 1, 11)
    np.testing.assert_allclose(d.cdf(inverse_cdf(d, t)), t, atol=1e-14)


def test_uniform_needs_no_ironing():
    iv = ironed_virtual(OneDimProblem(U, 2))
    assert iv.ironed == []
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(iv(x), 2 * x - 1, atol=1e-12)
    assert iv.reserve == pytest.approx(0.5, abs=1e-12)


def independent_ironing(d, n=200001):
    """Classic ironing: H(F(x)) = int_0^x V rho = int_0^x (s rho(s) - (1 - F(s))) ds,
    integrated in value space where the integrand is bounded; then the lower
    convex hull of (F, H) with scipy, differentiated."""
    x = np.linspace(0, 1, n)
    H = integrate.cumulative_trapezoid(x * d.pdf(x) - (1 - d.cdf(x)), x, initial=0.0)
    s = d.cdf(x)
    hull = spatial.ConvexHull(np.stack([s, H], axis=1))
    # lower hull: edges whose outward normal points down
    lower = set()
    for simplex, eq in zip(hull.simplices, hull.equations):
        if eq[1] < 0:
            lower.update(simplex.tolist())
    idx = np.array(sorted(lower))
    slopes = np.diff(H[idx]) / np.diff(s[idx])
    return lambda q: slopes[np.clip(np.searchsorted(s[idx], q, side="right") - 1, 0, len(slopes) - 1)], s, idx


def test_mixture_ironing_against_independent_hull():
    prob = OneDimProblem(MIX, 2)
    iv = ironed_virtual(prob)
    assert len(iv.ironed) == 1
    lo, hi = iv.ironed_x[0]
    oracle, s, idx = independent_ironing(MIX)
    xs = np.linspace(0.005, 0.995, 400)
    ours = iv(xs)
    # constant on the ironed interval
    inside = (xs > lo + 1e-3) & (xs < hi - 1e-3)
    assert np.ptp(ours[inside]) < 1e-12
    # the oracle's hull slope on the interval is the average of V over it
    q = MIX.cdf(xs[inside])
    assert np.max(np.abs(oracle(q) - ours[inside])) < 2e-3
    assert np.all(np.diff(ours) >= -1e-9)
    outside = (xs < lo - 0.02) | (xs > hi + 0.02)
    np.testing.assert_allclose(ours[outside], virtual_value(prob, xs[outside]), atol=1e-12)


def test_ironed_invariants():
    for d in (U, MIX, Density1D.normal_mixture((0.6, 0.4), (0.25, 0.75), (0.08, 0.08))):
        prob = OneDimProblem(d, 2)
        iv = ironed_virtual(prob)
        xs = np.linspace(0, 1, 501)
        assert np.all(iv(xs) <= xs + 1e-9)
        assert iv.hull(np.array([1.0]))[0] == pytest.approx(0.0, abs=1e-12)
        # the top interval is never ironed
        assert all(hi < 1.0 for _, hi in iv.ironed_x)
        # tail integrals of V_bar dominate those of V
        for t in np.linspace(0.05, 0.95, 10):
            f = lambda x, g: float(g(np.array([x]))[0] * d.pdf(np.array([x]))[0])
            a = integrate.quad(f, t, 1, args=(iv,), limit=200, points=[p for iv_ in iv.ironed_x for p in iv_])[0]
            b = integrate.quad(f, t, 1, args=(lambda x: virtual_value(prob, x),), limit=200)[0]
            assert a >= b - 1e-7


def test_myerson_closed_forms():
    assert myerson_revenue(OneDimProblem(U, 1)) == pytest.approx(0.25, abs=1e-8)
    assert myerson_revenue(OneDimProblem(U, 2)) == pytest.approx(5 / 12, abs=1e-8)
    assert selling_separately([U, U], 2) == pytest.approx(5 / 6, abs=1e-8)
    for B in (1, 2, 3, 5):
        # 2 B int_{1/2}^1 (2x - 1) x^(B-1) dx
        expect = 2 * B * integrate.quad(lambda x: (2 * x - 1) * x ** (B - 1), 0.5, 1)[0]
        assert selling_separately([U, U], B) == pytest.approx(expect, abs=1e-8)


def test_myerson_matches_monte_carlo_auction():
    rng = np.random.default_rng(7)
    vals = rng.random((10 ** 7, 2))
    mc = second_price_revenue(vals, 0.5).mean()
    assert mc == pytest.approx(5 / 12, abs=5e-4)
    mc1 = np.where(vals[:, 0] >= 0.5, 0.5, 0.0).mean()
    assert mc1 == pytest.approx(0.25, abs=5e-4)


def test_mixture_myerson_matches_monte_carlo_auction():
    # ironing sits below the reserve, so a second-price auction with that
    # reserve is optimal
    rng = np.random.default_rng(11)
    prob = OneDimProblem(MIX, 2)
    iv = ironed_virtual(prob)
    vals = sample(MIX, 2 * 10 ** 6, rng).reshape(-1, 2)
    mc = second_price_revenue(vals, iv.reserve).mean()
    assert myerson_revenue(prob, iv) == pytest.approx(mc, abs=2e-3)


def test_full_surplus():
    assert full_surplus([U, U], 2) == pytest.approx(4 / 3, abs=1e-8)
    assert full_surplus([U, U], 1) == pytest.approx(1.0, abs=1e-8)
    vals = [full_surplus([U, U], B) for B in (1, 2, 4, 8, 64)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(2 * 64 / 65)
    rng = np.random.default_rng(3)
    d = Density1D.linear(0.6)
    mc = sample(d, 3 * 10 ** 6, rng).reshape(-1, 3).max(axis=1).mean()
    assert full_surplus([d], 3) == pytest.approx(mc, abs=1e-3)


@pytest.mark.parametrize("d", [U, Density1D.linear(0.6), Density1D.linear(-0.6)])
def test_revenue_monotone_in_B_and_below_surplus(d):
    revs = [myerson_revenue(OneDimProblem(d, B)) for B in (1, 2, 3, 5)]
    assert all(b >= a - 1e-12 for a, b in zip(revs, revs[1:]))
    for B in (1, 2, 3, 5):
        assert full_surplus([d, d], B) >= selling_separately([d, d], B)


def test_manelli_vincent_points():
    assert manelli_vincent(0.1, 0.1) == (0.0, "Z")
    u, tag = manelli_vincent(0.9, 0.1)
    assert tag == "A" and u == pytest.approx(0.9 - 2 / 3)
    assert manelli_vincent(0.1, 0.9)[1] == "B"
    u, tag = manelli_vincent(0.9, 0.9)
    assert tag == "W" and u == pytest.approx(1.8 - MV_BUNDLE)


def test_manelli_vincent_revenue():
    assert MV_REVENUE == pytest.approx(0.54920, abs=1e-5)
    assert manelli_vincent_revenue(2000) == pytest.approx(MV_REVENUE, abs=1e-4)
    # Monte Carlo: posted prices 2/3 per item and the bundle price
    rng = np.random.default_rng(5)
    x, y = rng.random(10 ** 7), rng.random(10 ** 7)
    _, tag = manelli_vincent(x, y)
    pay = np.select([tag == "A", tag == "B", tag == "W"], [MV_PRICE, MV_PRICE, MV_BUNDLE], 0.0)
    assert pay.mean() == pytest.approx(MV_REVENUE, abs=5e-4)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(0, 1), y=st.floats(0, 1), h=st.floats(1e-6, 0.1), lam=st.floats(0, 1),
       x2=st.floats(0, 1), y2=st.floats(0, 1))
def test_manelli_vincent_shape(x, y, h, lam, x2, y2):
    u = lambda a, b: manelli_vincent(a, b)[0]
    assert u(0.0, 0.0) == 0.0
    assert u(min(1, x + h), y) >= u(x, y)
    assert u(min(1, x + h), y) - u(x, y) <= h + 1e-12
    assert u(x, min(1, y + h)) - u(x, y) <= h + 1e-12
    mid = u(lam * x + (1 - lam) * x2, lam * y + (1 - lam) * y2)
    assert mid <= lam * u(x, y) + (1 - lam) * u(x2, y2) + 1e-12


def test_hinge_integral_closed_form():
    for I in (1, 2, 3):
        for a in (0.7, 0.9):
            s = I * (1 - a)
            if s <= 1:
                assert hinge_integral([U] * I, a) == pytest.approx(s ** (I + 1) / math.factorial(I + 1), abs=1e-9)


def test_separate_sale_margin_uniform():
    m = separate_sale_infeasible(2, 2, U, 0.9)
    assert m == pytest.approx(0.2 ** 3 / 6, abs=1e-9)
    assert m > 0
    assert separate_sale_infeasible(1, 2, U, 0.9) == pytest.approx(0.0, abs=1e-10)


def test_separate_sale_margin_tracks_hinge():
    for I in (2, 3):
        for a in (0.8, 0.9):
            m = separate_sale_infeasible(I, 2, U, a)
            assert m == pytest.approx((I - 1) * hinge_integral([U] * I, a), abs=1e-8)
    d = Density1D.linear(0.5)
    rng = np.random.default_rng(9)
    xs = sample(d, 2 * 10 ** 6, rng).reshape(-1, 2)
    mc = np.maximum(0, xs.sum(axis=1) - 1.6).mean()
    assert separate_sale_infeasible(2, 3, [d, d], 0.8) == pytest.approx(mc, abs=2e-4)


def test_separate_sale_rejects_bad_a():
    with pytest.raises(ValueError):
        separate_sale_infeasible(2, 2, U, 1.0)
    with pytest.raises(ValueError):
        separate_sale_infeasible(2, 2, U, 0.0)
    lo, hi = ironed_virtual(OneDimProblem(MIX, 2)).ironed_x[0]
    with pytest.raises(ValueError, match="ironing"):
        separate_sale_infeasible(2, 2, MIX, hi - 0.05)
    assert separate_sale_infeasible(2, 2, MIX, 0.9) > 0
