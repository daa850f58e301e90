import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nodalab.field import (CoefficientField, ellipticity_audit, harmonic_polynomial_solution, hoelder_audit,
                           make_hoelder_field, matrix_sqrt, matrix_sqrt_batch, polynomial_solution)
from nodalab.hhp import HarmonicPolynomial, HomogeneousPoly, from_monomial_list


def brute_hoelder(fld, n=10_000, seed=7):
    rng = np.random.default_rng(seed)
    y = rng.uniform(-1, 1, (n, fld.dim))
    z = rng.uniform(-1, 1, (n, fld.dim))
    d = np.linalg.norm(y - z, axis=1) ** fld.alpha
    return float(np.max(np.max(np.abs(fld.a(y) - fld.a(z)), axis=(1, 2)) / d))


def test_bump_hoelder_quotient_brute_force():
    fld = make_hoelder_field(1, 0.3, 0.5, 2, "radial_bump")
    assert brute_hoelder(fld) <= 0.3


def test_bump_min_eigenvalue_sweep():
    fld = make_hoelder_field(2, 0.3, 0.5, 2, "radial_bump")
    t = np.linspace(-1, 1, 64)
    P = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
    assert np.linalg.eigvalsh(fld.a(P)).min() >= 1 / 1.3


@pytest.mark.parametrize("mode", ["identity", "radial_bump", "random_smoothed"])
@pytest.mark.parametrize("dim", [2, 3])
def test_field_invariants(mode, dim):
    fld = make_hoelder_field(5, 0.25, 0.4, dim, mode)
    audit = hoelder_audit(fld, n_pairs=4000)
    assert audit.ok
    assert brute_hoelder(fld, 4000) <= 0.25 + 1e-12


def test_identity_field_is_identity():
    fld = make_hoelder_field(0, 0.0, 0.5, 3, "identity")
    assert fld.is_identity
    P = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    assert np.array_equal(fld.a(P), np.broadcast_to(np.eye(3), (10, 3, 3)))


def test_field_json_round_trip():
    fld = make_hoelder_field(3, 0.2, 0.6, 3, "random_smoothed")
    back = CoefficientField.from_json(fld.to_json())
    P = np.random.default_rng(1).uniform(-1, 1, (50, 3))
    assert np.array_equal(back.a(P), fld.a(P))


@pytest.mark.parametrize("bad", [dict(lam=-0.1), dict(alpha=0.0), dict(alpha=1.0), dict(dim=4),
                                 dict(mode="spiral")])
def test_field_rejects_bad_parameters(bad):
    args = dict(seed=0, lam=0.3, alpha=0.5, dim=2, mode="radial_bump") | bad
    with pytest.raises(ValueError):
        make_hoelder_field(args["seed"], args["lam"], args["alpha"], args["dim"], args["mode"])


def test_matrix_sqrt_example():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    S = matrix_sqrt(a)
    assert np.max(np.abs(S @ S - a)) <= 1e-12
    assert np.allclose(S, scipy.linalg.sqrtm(a).real, atol=1e-12)


def test_matrix_sqrt_rejects_indefinite():
    with pytest.raises(ValueError):
        matrix_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))


@given(arrays(float, (3, 3), elements=st.floats(-1, 1)))
def test_matrix_sqrt_property(m):
    a = m @ m.T + 0.1 * np.eye(3)
    S = matrix_sqrt(a)
    assert np.allclose(S, S.T, atol=1e-13)
    assert np.linalg.eigvalsh(S).min() > 0
    assert np.max(np.abs(S @ S - a)) <= 1e-10 * max(1.0, np.abs(a).max())
    assert np.allclose(matrix_sqrt_batch(a[None])[0], S, atol=1e-12)


def test_linear_solution_gradient(linear2):
    P = np.random.default_rng(0).uniform(-3, 3, (20, 2))
    assert np.allclose(linear2.gradient(P), [[1.0, 0.0]] * 20, atol=1e-14)


def test_monomial_saddle_values():
    u = polynomial_solution([from_monomial_list(2, [((2, 0), 1.0), ((0, 2), -1.0)])])
    assert u(np.array([[1.0, 0.0]]))[0] == 1.0
    assert np.array_equal(u.gradient(np.array([[1.0, 0.0]]))[0], [2.0, 0.0])
    x = polynomial_solution([from_monomial_list(2, [((1, 0), 1.0)])])
    assert np.array_equal(x.gradient(np.array([[0.3, -2.0]]))[0], [1.0, 0.0])


def fd_laplacian(u, P, h=1e-3):
    out = np.zeros(len(P))
    for i in range(P.shape[1]):
        e = np.zeros(P.shape[1])
        e[i] = h
        out += (u(P + e) - 2 * u(P) + u(P - e)) / h ** 2
    return out


def test_cubic_is_harmonic_by_finite_differences():
    u = polynomial_solution([from_monomial_list(2, [((3, 0), 1.0), ((1, 2), -3.0)])])
    P = np.random.default_rng(4).uniform(-1, 1, (100, 2))
    assert np.max(np.abs(fd_laplacian(u, P))) <= 1e-6


@given(st.integers(2, 3), st.integers(0, 6), st.integers(0, 2 ** 31))
def test_harmonic_polynomial_solutions_have_zero_laplacian(dim, d, seed):
    from nodalab.hhp import random_harmonic
    u = harmonic_polynomial_solution(random_harmonic(dim, d, np.random.default_rng(seed)))
    P = np.random.default_rng(seed + 1).uniform(-1, 1, (20, dim))
    scale = max(1.0, float(np.max(np.abs(u(P)))))
    assert np.max(np.abs(fd_laplacian(u, P))) <= 1e-6 * 10 ** d * scale


def test_non_harmonic_polynomial_rejected():
    with pytest.raises(ValueError):
        harmonic_polynomial_solution(HomogeneousPoly.from_terms(2, {(2, 0): 1.0, (0, 2): 1.0}))


def test_ellipticity_audit_bounds():
    fld = make_hoelder_field(0, 0.5, 0.5, 3, "radial_bump")
    lo, hi, asym = ellipticity_audit(fld, np.random.default_rng(0).uniform(-1, 1, (500, 3)))
    assert lo >= 1 / 1.5 - 1e-12 and hi <= 1.5 + 1e-12 and asym <= 1e-14
