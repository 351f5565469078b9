import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import solved
from optauction.duality import (
    CertificateError,
    DualCertificate,
    PiecewiseLinearPhi,
    c_eta,
    certify_gap,
    check_certificate,
    extract_certificate,
    is_exact_partition,
    read_certificate_json,
    reconstruct_phi,
)
from optauction.grid import DensitySpec, build_grid
from optauction.lp_core import DualSolution, PrimalSolution, assemble, solve
from optauction.majorization import build_partition


def certified(B, I, n, M, mode="exact"):
    grid, part, primal, dual, _ = solved(B, I, n, M, mode)
    return grid, part, primal, extract_certificate(dual, grid, part)


def test_toy_certificate_reproduces_objective():
    g = build_grid(1, DensitySpec.uniform(1))
    part = build_partition(1, 1)
    primal, dual = solve(assemble(g, part, np.zeros((0, 2), int)))
    cert = extract_certificate(dual, g, part)
    # hand dual: the p column gives mu c = mu theta, so c = 1/2, and the pi
    # column gives phi + psi = t c with t = 1
    assert cert.c[0, 0] == pytest.approx(0.5)
    assert cert.phi[0, 0] + cert.psi[0, 0] == pytest.approx(0.5)
    assert float(g.mu @ cert.psi[:, 0] + part.w @ cert.phi[:, 0]) == pytest.approx(0.5)
    assert cert.dual_objective == pytest.approx(primal.objective)


def test_zero_certificate_passes_checks():
    g = build_grid(3, DensitySpec.uniform(2))
    part = build_partition(2, 3)
    cert = DualCertificate.zeros(g, part)
    rep = check_certificate(PrimalSolution.zeros(g.N, 2, 3), cert, g, part)
    assert rep.passed, rep.failures()
    phi = reconstruct_phi(cert, 0)
    assert np.all(phi(np.linspace(0, 1, 11)) == 0)


def test_extract_rejects_bad_duals():
    g = build_grid(1, DensitySpec.uniform(1))
    part = build_partition(1, 1)
    _, dual = solve(assemble(g, part, np.zeros((0, 2), int)))
    with pytest.raises(CertificateError, match="status"):
        extract_certificate(replace(dual, status="infeasible"), g, part)
    rows = dict(dual.rows)
    del rows["mjE"]
    with pytest.raises(CertificateError, match="mjE"):
        extract_certificate(replace(dual, rows=rows), g, part)
    rows = dict(dual.rows)
    rows["mjJ"] = -np.ones_like(rows["mjJ"])
    with pytest.raises(CertificateError, match="negative"):
        extract_certificate(replace(dual, rows=rows), g, part)


def test_single_piece_phi():
    phi = PiecewiseLinearPhi([1.0], [0.5])
    ts = np.linspace(0, 1, 101)
    np.testing.assert_allclose(phi(ts), np.maximum(0, ts - 0.5), atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 3)), min_size=1, max_size=12))
def test_envelope_matches_brute_max(lines):
    a = np.array([l[0] for l in lines])
    b = np.array([l[1] for l in lines])
    phi = PiecewiseLinearPhi(a, b)
    ts = np.linspace(0, 1, 257)
    brute = np.maximum(0.0, (ts[:, None] * a[None, :] - b[None, :]).max(axis=1))
    np.testing.assert_allclose(phi(ts), brute, atol=1e-12)
    assert phi(np.array([0.0]))[0] == 0
    assert np.all(np.diff(phi(ts)) >= -1e-12)
    assert np.all(np.diff(phi(ts), 2) >= -1e-9)


def test_c_eta_constants():
    assert c_eta(2) == pytest.approx(9.0)
    assert c_eta(1) == pytest.approx(6.0)
    # eta is the law of U^(B-1), so eta([1/2, 1]) = 1 - 2^(-1/(B-1))
    for B in (3, 4, 5, 7):
        assert c_eta(B) == pytest.approx(3 * (1 + 1 / (1 - 2 ** (-1 / (B - 1)))))


def test_exactness_classification():
    assert is_exact_partition(build_partition(2, 7, "uniform"))
    assert is_exact_partition(build_partition(3, 7, "exact"))
    assert not is_exact_partition(build_partition(3, 7, "quantile"))
    assert is_exact_partition(build_partition(1, 1))


def test_gap_tail_term_for_uniform_segments():
    g, part, primal, cert = certified(2, 1, 20, 10)
    rep = certify_gap(primal.objective, cert, part)
    assert rep.tail_integral == pytest.approx(1 / (8 * 10 ** 2), rel=1e-9)
    assert rep.quadratic_bound == pytest.approx(primal.objective + cert.c.max(axis=0).sum() / 800)
    assert rep.linear_bound == pytest.approx((1 + 0.1 * 9) * primal.objective)
    assert rep.upper_bound >= primal.objective
    assert rep.weak_duality_residual == pytest.approx(0, abs=1e-7)


def test_gap_omits_bounds_with_reason():
    g = build_grid(4, DensitySpec.uniform(1))
    part = build_partition(3, 4, "quantile")
    primal, dual = solve(assemble(g, part, np.zeros((0, 2), int)))
    rep = certify_gap(primal.objective, extract_certificate(dual, g, part), part)
    assert rep.linear_bound is None and rep.quadratic_bound is None
    assert rep.upper_bound is None
    assert len(rep.notes) == 2


def test_bounds_shrink_with_M():
    ups = []
    for M in (5, 10, 20):
        g, part, primal, cert = certified(2, 1, 20, M)
        ups.append(certify_gap(primal.objective, cert, part).certified_gap)
    assert ups[0] > ups[1] > ups[2] > 0


@pytest.mark.parametrize("B,I,n,M", [(1, 1, 20, 1), (2, 1, 30, 10), (3, 2, 6, 8), (2, 2, 8, 6)])
def test_optimal_pairs_pass_all_checks(B, I, n, M):
    g, part, primal, cert = certified(B, I, n, M)
    rep = check_certificate(primal, cert, g, part)
    assert rep.passed, rep.to_dict()
    assert cert.dual_objective == pytest.approx(primal.objective, abs=1e-6)
    for k in range(I):
        phi = reconstruct_phi(cert, k)
        ts = np.linspace(0, 1, 501)
        v = phi(ts)
        assert v[0] == 0
        assert np.all(np.diff(v, 2) >= -1e-9)
        assert np.all(phi(part.t) >= cert.phi[:, k] - 1e-7)


def test_c_monotone_where_mass():
    g, part, primal, cert = certified(2, 2, 8, 6)
    mass = primal.pi.sum(axis=1)
    n = g.n
    for k in range(2):
        c = cert.c[:, k].reshape(n, n)
        m = mass[:, k].reshape(n, n) > 1e-9
        c = np.moveaxis(c, k, 0)
        m = np.moveaxis(m, k, 0)
        for r in range(n - 1):
            both = m[r] & m[r + 1]
            assert np.all(c[r + 1][both] >= c[r][both] - 1e-6)


def test_perturbation_is_reported():
    g, part, primal, cert = certified(2, 2, 8, 6)
    j = int(np.argmax(primal.u > 0.05)) if np.any(primal.u > 0.05) else g.N - 1
    bad = replace(primal, u=primal.u.copy())
    bad.u[j] += 0.01
    rep = check_certificate(bad, cert, g, part)
    assert not rep.passed
    assert set(rep.failures()) & {"ic", "ex_post", "strong_duality"}
    # an ic failure points at the worst pair; an ex-post one at the perturbed cell
    if "ex_post" in rep.failures():
        assert rep.checks["ex_post"].where == j


def test_one_item_two_bidders_matches_ironed_virtual_value():
    g, part, primal, cert = certified(2, 1, 200, 100)
    x = g.theta[:, 0]
    away = np.abs(x - 0.5) > 0.05
    err = np.abs(cert.c[:, 0] - np.maximum(0, 2 * x - 1))[away]
    assert err.max() <= 0.05
    phi = reconstruct_phi(cert, 0)
    ts = np.linspace(0, 1, 401)
    # integral of max(0, 2s - 1) from 0 to t
    assert np.max(np.abs(phi(ts) - np.maximum(0, ts - 0.5) ** 2)) <= 0.02


def test_certificate_json_round_trip(tmp_path):
    g, part, primal, cert = certified(2, 2, 8, 6)
    (tmp_path / "c.json").write_text(json.dumps(cert.to_json()))
    back = read_certificate_json(tmp_path / "c.json")
    np.testing.assert_array_equal(back.c, cert.c)
    np.testing.assert_array_equal(back.phi, cert.phi)
    assert back.dual_objective == cert.dual_objective
    (tmp_path / "bad.json").write_text("{\n  \"phi\": [\n")
    with pytest.raises(ValueError, match="line"):
        read_certificate_json(tmp_path / "bad.json")
