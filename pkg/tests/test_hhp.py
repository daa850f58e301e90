import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodalab import hhp
from nodalab.hhp import HarmonicPolynomial, HomogeneousPoly

H = HarmonicPolynomial.from_terms


def quad_avg(f, dim):
    """Independent sphere average: trapezoid in 2D, Gauss-Legendre x uniform azimuth in 3D."""
    if dim == 2:
        t = 2 * np.pi * np.arange(256) / 256
        return float(np.mean(f(np.stack([np.cos(t), np.sin(t)], 1))))
    z, w = np.polynomial.legendre.leggauss(40)
    phi = 2 * np.pi * np.arange(96) / 96
    Z, PH = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - Z ** 2)
    P = np.stack([s * np.cos(PH), s * np.sin(PH), Z], -1).reshape(-1, 3)
    W = np.repeat(w, len(phi)) / (2 * len(phi))
    return float(W @ f(P))


def test_basis_2d_degree_1():
    B = hhp.basis(2, 1)
    assert len(B) == 2
    pts = np.random.default_rng(0).standard_normal((5, 2))
    vals = sorted([tuple(np.round(b(np.eye(2)), 12)) for b in B])
    assert np.allclose(np.abs(vals), [[0, math.sqrt(2)], [math.sqrt(2), 0]])
    assert quad_avg(lambda p: B[0](p) ** 2, 2) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(B[0](pts) ** 2 + B[1](pts) ** 2, 2 * np.sum(pts ** 2, 1))


def test_basis_degree_0():
    (b,) = hhp.basis(2, 0)
    assert b(np.zeros((1, 2)))[0] == pytest.approx(1.0)


@pytest.mark.parametrize("dim,d", [(3, 2), (2, 5), (3, 4), (3, 7)])
def test_basis_gram_by_quadrature(dim, d):
    B = hhp.basis(dim, d)
    assert len(B) == hhp.space_dim(dim, d) == (2 * d + 1 if dim == 3 else (2 if d else 1))
    G = np.array([[quad_avg(lambda p: a(p) * b(p), dim) for b in B] for a in B])
    assert np.max(np.abs(G - np.eye(len(B)))) <= 1e-12


def test_sphere_inner_examples():
    x = H(2, {(1, 0): 1.0})
    assert hhp.sphere_inner(x, x) == pytest.approx(0.5, abs=1e-15)
    p = H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0})
    q = H(3, {(0, 2, 0): 1.0, (0, 0, 2): -1.0})
    assert hhp.sphere_inner(p, q) == pytest.approx(-2 / 15, abs=1e-15)


def test_gradient_identity_examples():
    lhs, rhs = hhp.gradient_identity_check(H(2, {(1, 0): 1.0}), H(2, {(1, 0): 1.0}))
    assert (lhs, rhs) == pytest.approx((1.0, 1.0), abs=1e-15)
    c = HarmonicPolynomial(2, 0, [1.0])
    assert hhp.gradient_identity_check(c, c) == (0.0, 0.0)
    s = H(2, {(2, 0): 1.0, (0, 2): -1.0})
    lhs, rhs = hhp.gradient_identity_check(s, s)
    # |grad s|^2 = 4(x^2 + y^2) = 4 on the circle
    assert lhs == pytest.approx(4.0, abs=1e-12) and rhs == pytest.approx(lhs, abs=1e-12)


@given(st.integers(2, 3), st.integers(1, 10), st.integers(0, 2 ** 31))
def test_gradient_identity_property(dim, d, seed):
    rng = np.random.default_rng(seed)
    P1, P2 = hhp.random_harmonic(dim, d, rng), hhp.random_harmonic(dim, d, rng)
    lhs, rhs = hhp.gradient_identity_check(P1, P2)
    assert abs(lhs - rhs) <= 1e-10 * d * (2 * d + dim - 2)


@given(st.integers(2, 3), st.integers(0, 10), st.integers(0, 2 ** 31))
def test_norm_equals_coefficient_norm(dim, d, seed):
    P = HarmonicPolynomial(dim, d, np.random.default_rng(seed).standard_normal(hhp.space_dim(dim, d)))
    assert P.norm() ** 2 == pytest.approx(float(P.coeffs @ P.coeffs), rel=1e-12)
    assert P.poly.laplacian().is_zero(1e-9 * max(1.0, P.poly.max_abs_coeff()))


@given(st.integers(2, 3), st.integers(1, 10), st.integers(0, 2 ** 31))
def test_directional_lower_bound_on_complement(dim, d, seed):
    rng = np.random.default_rng(seed)
    e1 = np.eye(dim)[0]
    K = hhp.invariant_subspace(dim, d, e1[None])
    c = rng.standard_normal(hhp.space_dim(dim, d))
    c -= K @ (K.T @ c)
    P = HarmonicPolynomial(dim, d, c)
    assert P.norm() <= hhp.directional_norm(P, e1) * (1 + 1e-10)


def test_sup_norm_ratio_examples():
    assert hhp.sup_norm_ratio(HarmonicPolynomial(2, 1, [1.0, 0.0])) == pytest.approx(math.sqrt(2), rel=1e-9)
    for d in (2, 3, 5):
        z = HomogeneousPoly.from_terms(2, {(1, 0): 1.0, (0, 1): 0.0})
        re, im = z, HomogeneousPoly.from_terms(2, {(0, 1): 1.0})
        x, y = re, im
        for _ in range(d - 1):
            re, im = re * x - im * y, re * y + im * x
        assert hhp.sup_norm_ratio(re) == pytest.approx(math.sqrt(2), rel=1e-9)


def test_sup_norm_ratio_zonal_legendre():
    # sqrt(2d+1) P_d(z) has unit sphere norm and sup sqrt(2d+1)
    from nodalab.green import zonal_polynomial
    P = zonal_polynomial(np.array([0.0, 0.0, 1.0]), 4)
    assert P.norm() == pytest.approx(1.0, abs=1e-10)
    assert hhp.sup_norm_ratio(P) == pytest.approx(3.0, rel=1e-9)


def test_decompose_invariant_examples():
    inv, perp = hhp.decompose_invariant(H(2, {(1, 0): 1.0}), np.array([1.0, 0.0]))
    assert inv.norm() <= 1e-14 and perp.norm() == pytest.approx(math.sqrt(0.5))
    inv, perp = hhp.decompose_invariant(H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0}), np.array([1.0, 0, 0]))
    assert perp.norm() <= hhp.directional_norm(perp, [1.0, 0, 0]) * (1 + 1e-12)
    assert hhp.directional_norm(inv, [1.0, 0, 0]) <= 1e-12


@given(st.integers(2, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_decompose_invariant_is_orthogonal(dim, d, seed):
    rng = np.random.default_rng(seed)
    P = hhp.random_harmonic(dim, d, rng)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    inv, perp = hhp.decompose_invariant(P, v)
    assert abs(hhp.sphere_inner(inv, perp)) <= 1e-10
    assert inv.norm() ** 2 + perp.norm() ** 2 == pytest.approx(1.0, rel=1e-10)
    assert hhp.directional_norm(inv, v) <= 1e-9


def test_directional_norm_examples():
    assert hhp.directional_norm(H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0}), [0, 0, 1.0]) == 0.0
    assert hhp.directional_norm(H(2, {(1, 1): 1.0}), [1.0, 0]) == pytest.approx(1 / math.sqrt(2), rel=1e-14)


def test_split_examples():
    assert not hhp.polynomial_split_test(H(2, {(2, 0): 1.0, (0, 2): -1.0}), [1.0, 0.0]).splits
    res = hhp.polynomial_split_test(H(2, {(1, 0): 1.0}), [0.0, 1.0])
    assert res.splits
    res = hhp.polynomial_split_test(H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0}), [0, 0, 2.0])
    assert res.splits and res.invariant and res.direction_added.shape == (1, 3)


def test_split_rejects_non_homogeneous_use():
    P = H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0})
    with pytest.raises(ValueError):
        hhp.polynomial_split_test(P, [1.0, 0, 0], V=[[1.0, 0, 0]])


@given(st.integers(2, 6), st.floats(-2, 2).filter(lambda t: abs(t) > 1e-3), st.integers(0, 2 ** 31))
def test_split_detects_invariance(d, t, seed):
    # polynomials of (x, y) lifted to 3D are invariant along e_z
    p2 = hhp.random_harmonic(2, d, np.random.default_rng(seed))
    terms = {tuple(e) + (0,): float(c) for e, c in zip(hhp.monomials(2, d), hhp.as_poly(p2).coeffs)}
    P = HomogeneousPoly.from_terms(3, terms)
    assert hhp.polynomial_split_test(P, [0, 0, t]).splits
    assert not hhp.polynomial_split_test(P, [t, 0.37, 0.1]).splits


def test_almost_invariant_examples():
    P = H(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0})
    sp = hhp.almost_invariant_decomposition(P, [[0, 0, 1.0]], 0.01)
    assert sp.ratio == pytest.approx(1.0) and (sp.P1.coeffs == pytest.approx(P.coeffs))
    delta = 0.05
    Q = HarmonicPolynomial.from_poly(HomogeneousPoly.from_terms(
        3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0, (1, 0, 1): delta}))
    sp = hhp.almost_invariant_decomposition(Q, [[0, 0, 1.0]], 1.0)
    sp = hhp.almost_invariant_decomposition(Q, [[0, 0, 1.0]], sp.eps_induced)
    assert sp.hypothesis_ok and sp.ratio >= sp.bound
    # Re (x+iy)^2 in 3D is invariant along e_z only
    sp = hhp.almost_invariant_decomposition(P, [[0, 0, 1.0]], 0.0)
    assert np.allclose(sp.P1.coeffs, P.coeffs)


def test_to_dict_round_trip():
    P = hhp.random_harmonic(3, 4, np.random.default_rng(3))
    assert np.array_equal(HarmonicPolynomial.from_dict(P.to_dict()).coeffs, P.coeffs)
