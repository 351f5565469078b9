import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optauction.grid import (
    Density1D,
    DensityError,
    DensitySpec,
    ModelTooLargeError,
    build_grid,
    read_grid_csv,
)


def test_two_cells_uniform():
    g = build_grid(2, DensitySpec.uniform(1))
    np.testing.assert_allclose(g.theta[:, 0], [0.25, 0.75])
    np.testing.assert_allclose(g.mu, [0.5, 0.5])
    assert g.mu0 == 0.0


def test_single_cell_two_items():
    g = build_grid(1, DensitySpec.uniform(2))
    np.testing.assert_allclose(g.theta, [[0.5, 0.5]])
    np.testing.assert_allclose(g.mu, [1.0])
    assert g.mu0 == 0.0


def test_increasing_density_cell_minima():
    # rho(x) = 2x has minima 0 and 1 on the two cells
    g = build_grid(2, DensitySpec((Density1D.power(1.0),)))
    np.testing.assert_allclose(g.mu, [0.0, 0.5])
    assert g.mu0 == pytest.approx(0.5)


def test_row_major_order():
    g = build_grid(3, DensitySpec.uniform(2))
    # last item varies fastest
    np.testing.assert_array_equal(g.index[:4], [[0, 0], [0, 1], [0, 2], [1, 0]])
    np.testing.assert_allclose(g.theta[1], [1 / 6, 0.5])


def test_theta_on_lattice():
    n = 7
    g = build_grid(n, DensitySpec.uniform(3))
    levels = (2 * np.arange(1, n + 1) - 1) / (2 * n)
    assert np.all(np.isin(np.round(g.theta, 12), np.round(levels, 12)))


def test_model_too_large():
    with pytest.raises(ModelTooLargeError):
        build_grid(200, DensitySpec.uniform(3), max_cells=1_000_000)


def test_negative_density_rejected():
    bad = Density1D(pdf=lambda x: 1.0 - 2.0 * (np.asarray(x) > 0.9), cdf=lambda x: np.asarray(x, float))
    with pytest.raises(DensityError):
        build_grid(4, DensitySpec((bad,)))


def test_unnormalized_density_rejected():
    bad = Density1D(pdf=lambda x: 2.0 * np.ones_like(np.asarray(x, float)),
                    cdf=lambda x: np.clip(2.0 * np.asarray(x, float), 0, 1))
    with pytest.raises(DensityError):
        build_grid(4, DensitySpec((bad,)))


def test_item_count_limits():
    with pytest.raises(ValueError):
        build_grid(2, DensitySpec.uniform(4))
    with pytest.raises(ValueError):
        build_grid(0, DensitySpec.uniform(1))


def test_mixture_cell_minimum_is_conservative():
    d = Density1D.normal_mixture([0.5, 0.5], [0.3, 0.7], [0.1, 0.1])
    n = 9
    mins = d.cell_minima(n)
    for a in range(n):
        xs = np.linspace(a / n, (a + 1) / n, 2001)
        brute = d.pdf(xs).min()
        assert mins[a] <= brute + 1e-12
        assert mins[a] >= brute - 1e-6


def test_csv_round_trip(tmp_path):
    g = build_grid(4, DensitySpec((Density1D.linear(0.5), Density1D.uniform())))
    g.to_csv(tmp_path / "g.csv")
    h = read_grid_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(g.theta, h.theta)
    np.testing.assert_array_equal(g.mu, h.mu)
    np.testing.assert_array_equal(g.index, h.index)


def test_density_dict_round_trip():
    spec = DensitySpec((Density1D.linear(-1.0), Density1D.normal_mixture([1, 2], [0.2, 0.6], [0.1, 0.2])))
    again = DensitySpec.from_dict(spec.to_dict(), 2)
    xs = np.random.default_rng(0).random((50, 2))
    np.testing.assert_allclose(spec.pdf(xs), again.pdf(xs))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 12), I=st.integers(1, 3),
       slopes=st.lists(st.floats(-2.0, 2.0, allow_nan=False), min_size=3, max_size=3))
def test_mass_balance_and_cell_bound(n, I, slopes):
    items = tuple(Density1D.linear(s) for s in slopes[:I])
    spec = DensitySpec(items)
    g = build_grid(n, spec)
    assert g.mu0 + g.mu.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(g.mu >= 0) and g.mu0 >= 0
    # mu_j <= max of the density over the cell / n^I; for linear marginals the
    # max sits at a corner
    corners = np.stack([np.stack([(g.index[:, k] + c) / n for k in range(I)], 1)
                        for c in (0, 1)])
    cmax = np.ones(g.N)
    for k, d in enumerate(items):
        cmax *= np.maximum(d.pdf(corners[0, :, k]), d.pdf(corners[1, :, k]))
    assert np.all(g.mu <= cmax / n ** I + 1e-15)


@given(n=st.integers(1, 30), I=st.integers(1, 2))
def test_uniform_weights(n, I):
    g = build_grid(n, DensitySpec.uniform(I))
    np.testing.assert_allclose(g.mu, n ** -I)
    assert g.mu0 == 0.0
    assert g.mu.sum() == pytest.approx(1.0, abs=1e-12)
