import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodalab import doubling as dbl
from nodalab import hhp
from nodalab.errors import DegenerateWindowError, DomainError
from nodalab.field import AnalyticSolution, harmonic_polynomial_solution, make_hoelder_field, polynomial_solution
from nodalab.hhp import from_monomial_list as mono

X2 = mono(2, [((1, 0), 1.0)])
SQ2 = mono(2, [((2, 0), 1.0), ((0, 2), -1.0)])


def const(value, dim=2):
    return AnalyticSolution(dim, lambda p: np.full(p.shape[:-1], value), lambda p: np.zeros(p.shape))


def D_closed_x_plus_saddle(r):
    # u = x + x^2 - y^2 at 0: sphere mean of u^2 at radius s is s^2/2 + s^4/2
    H = lambda s: s * s / 2 + s ** 4 / 2
    return math.log(H(2 * r) / H(r)) / math.log(4)


def test_window_of_linear_function():
    w = dbl.rescale(polynomial_solution([X2]), None, np.zeros(2), 0.5)
    y = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    assert np.allclose(w(y), math.sqrt(2) * y[:, 0], atol=1e-13)


def test_constant_solution_is_degenerate():
    with pytest.raises(DegenerateWindowError):
        dbl.rescale(const(5.0), None, np.zeros(2), 0.5)
    with pytest.raises(DegenerateWindowError):
        dbl.doubling_index(const(5.0), None, np.zeros(2), 0.5)


def test_constant_anisotropic_field_transform():
    # far from the bump centre a = I + 3 diag(1, 0) = diag(4, 1)
    fld = make_hoelder_field(0, 3.0, 0.5, 2, "radial_bump", x0=[10.0, 10.0], M=[[1.0, 0.0], [0.0, 0.0]])
    assert np.allclose(fld.a(np.zeros((1, 2)))[0], np.diag([4.0, 1.0]))
    w = dbl.rescale(polynomial_solution([X2]), fld, np.zeros(2), 0.1)
    assert np.allclose(w.A, np.diag([2.0, 1.0]), atol=1e-12)
    y = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    assert np.allclose(w(y) / w(np.array([[1.0, 0.0]]))[0], y[:, 0], atol=1e-12)


@given(st.integers(2, 3), st.integers(1, 5), st.integers(0, 2 ** 31), st.floats(0.05, 2.0),
       st.sampled_from(["centered", "uncentered"]))
def test_window_invariants(dim, d, seed, r, mode):
    rng = np.random.default_rng(seed)
    u = polynomial_solution([hhp.as_poly(hhp.random_harmonic(dim, 1, rng)),
                             hhp.as_poly(hhp.random_harmonic(dim, d, rng))])
    x = rng.uniform(-0.5, 0.5, dim)
    w = dbl.rescale(u, None, x, r, mode)
    sq = type("Sq", (), {"dim": dim, "__call__": lambda self, p: w(p) ** 2})()
    assert dbl.sphere_average(sq) == pytest.approx(1.0, rel=1e-10)
    if mode == "centered":
        assert abs(w(np.zeros((1, dim)))[0]) <= 1e-12


class Ev:
    def __init__(self, f, dim=2):
        self.f, self.dim = f, dim

    def __call__(self, p):
        return self.f(np.asarray(p))


@pytest.mark.parametrize("rho", [0.3, 1.0, 1.7, 2.0])
def test_sphere_average_examples(rho):
    assert dbl.sphere_average(Ev(lambda p: (p[:, 0] ** 2 - p[:, 1] ** 2) ** 2), rho) == pytest.approx(
        rho ** 4 / 2, rel=1e-12)
    assert dbl.sphere_average(Ev(lambda p: np.ones(len(p))), rho) == pytest.approx(1.0, rel=1e-14)


def test_sphere_average_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        dbl.sphere_average(Ev(lambda p: np.ones(len(p))), 0.0)


def test_doubling_index_taylor_oracle():
    u = polynomial_solution([SQ2])
    assert abs(dbl.doubling_index(u, None, [0.5, 0.0], 0.01) - 1.0) <= 0.05


@pytest.mark.parametrize("r", [2.0 ** -k for k in range(0, 8)])
def test_doubling_index_closed_form_curve(r):
    u = polynomial_solution([X2, SQ2])
    assert dbl.doubling_index(u, None, np.zeros(2), r) == pytest.approx(D_closed_x_plus_saddle(r), abs=1e-12)


@given(st.integers(2, 3), st.integers(1, 8), st.integers(0, 2 ** 31), st.integers(-5, 3))
def test_hhp_doubling_index_equals_degree(dim, d, seed, k):
    u = harmonic_polynomial_solution(hhp.random_harmonic(dim, d, np.random.default_rng(seed)))
    assert dbl.doubling_index(u, None, np.zeros(dim), 2.0 ** k) == pytest.approx(d, abs=1e-9)


@given(st.integers(0, 2 ** 31), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3), st.floats(-10, 10))
def test_doubling_index_affine_invariance(seed, c, b):
    rng = np.random.default_rng(seed)
    u = polynomial_solution([X2, SQ2])
    v = AnalyticSolution(2, lambda p: c * u(p) + b, lambda p: c * u.gradient(p))
    x = rng.uniform(-0.5, 0.5, 2)
    assert dbl.doubling_index(v, None, x, 0.3) == pytest.approx(dbl.doubling_index(u, None, x, 0.3), abs=1e-10)


def test_ball_doubling_examples():
    assert dbl.ball_doubling_index(polynomial_solution([X2]), None, np.zeros(2), 0.5) == pytest.approx(1.0)
    rng = np.random.default_rng(9)
    for _ in range(5):
        u = harmonic_polynomial_solution(hhp.random_harmonic(3, 3, rng))
        Dt = dbl.ball_doubling_index(u, None, rng.uniform(-0.5, 0.5, 3), 0.01)
        assert 1 - 0.05 <= Dt <= 3 + 0.05


@given(st.integers(2, 3), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_ball_bound_between_sphere_values(dim, d, seed):
    # for harmonic u the ball mean of u^2 lies in [n/(n+2N) H, H]
    rng = np.random.default_rng(seed)
    u = polynomial_solution([hhp.as_poly(hhp.random_harmonic(dim, 1, rng)),
                             hhp.as_poly(hhp.random_harmonic(dim, d, rng))])
    x = rng.uniform(-0.3, 0.3, dim)
    r = 0.4
    w = dbl.rescale(u, None, x, r)
    ball = dbl.ball_average(type("Sq", (), {"dim": dim, "__call__": lambda s, p: w(p) ** 2})())
    N = dbl.frequency(u, x, r)
    assert dim / (dim + 2 * N) * (1 - 1e-9) <= ball <= 1 + 1e-9


def test_frequency_examples():
    u = polynomial_solution([X2])
    for x in ([0.0, 0.0], [0.4, -0.7]):
        assert dbl.frequency(u, x, 0.3) == pytest.approx(1.0, abs=1e-12)
    v = polynomial_solution([X2, 0.1 * SQ2])
    rs = np.geomspace(1e-3, 2.0, 12)
    N = np.array([dbl.frequency(v, np.zeros(2), r) for r in rs])
    closed = (1 + 0.02 * rs ** 2) / (1 + 0.01 * rs ** 2)
    assert np.allclose(N, closed, atol=1e-12)
    assert np.all(np.diff(N) > 0) and N[0] == pytest.approx(1.0, abs=1e-7)


@given(st.integers(0, 2 ** 31))
def test_frequency_sandwich(seed):
    rng = np.random.default_rng(seed)
    u = polynomial_solution([X2, hhp.as_poly(hhp.random_harmonic(2, 2, rng)),
                             hhp.as_poly(hhp.random_harmonic(2, 4, rng))])
    x = rng.uniform(-0.3, 0.3, 2)
    for r in (0.05, 0.2, 0.6):
        D = dbl.doubling_index(u, None, x, r)
        assert dbl.frequency(u, x, r) - 1e-4 <= D <= dbl.frequency(u, x, 2 * r) + 1e-4


def test_h_identity_examples():
    for d in (1, 2, 5):
        P = harmonic_polynomial_solution(hhp.random_harmonic(3, d, np.random.default_rng(d)))
        assert dbl.h_identity_audit(P, np.zeros(3), 0.1, 0.7) <= 1e-9
    u = polynomial_solution([X2, SQ2])
    assert dbl.h_identity_audit(u, np.zeros(2), 0.1, 0.2) <= 1e-3
    assert dbl.h_identity_audit(u, np.zeros(2), 0.2, 0.2) == 0.0


def test_profile_examples(bump_saddle):
    p = dbl.profile(polynomial_solution([SQ2]), None, np.zeros(2), 0.5, 6)
    assert np.allclose(p.D, 2.0, atol=1e-12) and np.all(np.diff(p.scales) < 0)
    p = dbl.profile(polynomial_solution([X2]), None, np.zeros(2), 0.5, 6)
    assert np.allclose(p.D, 1.0, atol=1e-12)
    u, fld = bump_saddle
    p = dbl.profile(u, fld, np.zeros(2), 2.0 ** -4, 5)
    assert p.valid.all() and np.all(np.isfinite(p.D))
    assert p.to_csv().splitlines()[0] == "x,mode,r,D,N,H,flags"


def test_profile_flags_domain_failures(bump_saddle):
    u, fld = bump_saddle
    p = dbl.profile(u, fld, np.array([0.9, 0.0]), 0.25, 4)
    assert not p.valid[0] and p.flags[0] == "domain" and np.isnan(p.D[0])


def test_scale_cap_for_bounded_solutions(bump_saddle):
    u, fld = bump_saddle
    with pytest.raises(DomainError):
        dbl.doubling_index(u, fld, np.zeros(2), 1.0 / math.sqrt(1.3) * 1.01)


def test_monotonicity_audit_harmonic():
    u = polynomial_solution([X2, mono(2, [((3, 0), 1.0), ((1, 2), -3.0)])])
    p = dbl.profile(u, None, np.zeros(2), 1.0, 10)
    rep = dbl.almost_monotonicity_audit(p, 1e-3)
    assert rep.ok and rep.pairs_checked == 55


def test_monotonicity_audit_perturbed(bump_saddle):
    u, fld = bump_saddle
    p = dbl.profile(u, fld, np.array([0.1, 0.05]), 2.0 ** -4, 5)
    rep = dbl.almost_monotonicity_audit(p, 0.1)
    assert rep.ok and rep.min_small_scale_D >= 0.9


def test_monotonicity_audit_reports_violation():
    p = dbl.DoublingProfile(np.zeros(2), "centered", np.array([1.0, 0.5, 0.25]), np.array([1.0, 1.0, 1.5]),
                            np.full(3, np.nan), np.ones(3), ["", "", ""])
    rep = dbl.almost_monotonicity_audit(p, 0.1)
    assert len(rep.violations) == 2
    assert rep.violations[0] == pytest.approx((0.25, 1.0, 0.4))


def test_non_pinching_examples():
    p = dbl.profile(polynomial_solution([SQ2]), None, np.zeros(2), 1.0, 10)
    assert dbl.non_pinching_scales(p, 0.01) == ([], 0)
    u = polynomial_solution([X2, SQ2])
    p = dbl.profile(u, None, np.zeros(2), 4.0, 12)
    eps = 0.1
    expect = [j for j in range(6) if abs(D_closed_x_plus_saddle(4.0 * 4.0 ** -j)
                                         - D_closed_x_plus_saddle(4.0 * 4.0 ** -(j + 1))) >= eps]
    got, count = dbl.non_pinching_scales(p, eps)
    assert got == expect and count == len(expect) and 0 < count <= 2 / eps
    assert dbl.non_pinching_scales(p, 2.0) == ([], 0)
