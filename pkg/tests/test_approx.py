import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodalab import approx, hhp
from nodalab.errors import DomainError
from nodalab.field import harmonic_polynomial_solution, polynomial_solution
from nodalab.hhp import from_monomial_list as mono

MIX = polynomial_solution([mono(2, [((1, 0), 1.0)]), mono(2, [((2, 0), 1.0), ((0, 2), -1.0)]),
                           mono(2, [((3, 0), 1.0), ((1, 2), -3.0)])])


def test_fit_slope_exact_power():
    t = np.geomspace(1e-3, 1, 7)
    assert approx.fit_slope(t, 3 * t ** 1.7) == pytest.approx(1.7, abs=1e-12)


def test_sup_distance_decreases_at_bump_centre(bump_saddle):
    u, fld = bump_saddle
    sup = [approx.harmonic_approximation(u, fld, np.zeros(2), r)[1].sup_distance for r in (0.2, 0.1, 0.05)]
    assert sup[0] > sup[1] > sup[2] >= 0


def test_replacement_is_normalized(bump_saddle):
    u, fld = bump_saddle
    h, rep = approx.harmonic_approximation(u, fld, np.zeros(2), 0.1)
    assert rep.h_at_zero == pytest.approx(0.0, abs=1e-12)
    assert rep.h_sphere_mean_sq == pytest.approx(1.0, abs=1e-12)


def test_window_box_outside_domain(bump_saddle):
    u, fld = bump_saddle
    with pytest.raises(DomainError):
        approx.harmonic_approximation(u, fld, np.zeros(2), 0.3)


def test_harmonic_replacement_of_harmonic_polynomial():
    # the discrete Laplacian is exact up to degree 3, so the replacement reproduces the window
    h, rep = approx.harmonic_approximation(MIX, None, np.zeros(2), 0.2)
    assert rep.sup_distance <= 1e-7


def test_closeness_harmonic_entries_tiny():
    rows = approx.closeness_audit(MIX, None, np.array([0.1, -0.2]), 0.2, 0.1)
    assert [r["s"] for r in rows] == [2.0 ** -k for k in range(7)]
    assert max(r["diff"] for r in rows) <= 1e-6


def test_closeness_perturbed_within_eps(bump_saddle):
    u, fld = bump_saddle
    rows = approx.closeness_audit(u, fld, np.zeros(2), 0.1, 0.1)
    assert all(0.01 - 1e-12 <= r["s"] <= 1.0 for r in rows)
    assert max(r["diff"] for r in rows) <= 0.1


def test_pinched_exact_hhp():
    P = harmonic_polynomial_solution(hhp.random_harmonic(2, 2, np.random.default_rng(0)))
    h, rep = approx.pinched_approximation(P, None, np.zeros(2), 0.2, 0.01, 1e-3)
    assert rep.hypothesis_ok and rep.pinch_spread <= 1e-12
    assert rep.max_relative <= 1e-8 and rep.inner[0]["abs_error"] <= 1e-8


def test_pinched_closeness_within_ten_eps(bump_saddle):
    u, fld = bump_saddle
    _, probe = approx.pinched_approximation(u, fld, np.zeros(2), 0.1, 0.1 / 16, 1.0)
    eps = probe.pinch_spread
    _, rep = approx.pinched_approximation(u, fld, np.zeros(2), 0.1, 0.1 / 16, eps)
    assert rep.hypothesis_ok
    assert rep.max_closeness <= 10 * eps
    assert rep.max_relative <= 10 * eps
    assert not any(row["flag"] for row in rep.closeness)


def test_pinched_requires_scale_separation():
    with pytest.raises(ValueError):
        approx.pinched_approximation(MIX, None, np.zeros(2), 0.2, 0.05, 0.1)


@pytest.mark.parametrize("dim,d", [(2, 1), (2, 3), (3, 2), (3, 4)])
def test_growth_slopes_exact_hhp(dim, d):
    P = harmonic_polynomial_solution(hhp.random_harmonic(dim, d, np.random.default_rng(d)))
    rep = approx.gradient_growth_audit(P, None, np.zeros(dim), 0.5, 0.5 / 64, gamma=d)
    for slopes in (rep.slopes_outer, rep.slopes_inner):
        assert slopes == pytest.approx((2 * d, d, d - 1), abs=0.05)


@given(st.integers(0, 2 ** 31))
def test_sup_distance_nonnegative_and_table_in_range(seed):
    rng = np.random.default_rng(seed)
    u = polynomial_solution([hhp.as_poly(hhp.random_harmonic(2, 1, rng)),
                             hhp.as_poly(hhp.random_harmonic(2, 2, rng))])
    _, rep = approx.harmonic_approximation(u, None, rng.uniform(-1, 1, 2), 0.3, n_cells=32)
    assert rep.sup_distance >= 0
    rows = approx.closeness_audit(u, None, np.zeros(2), 0.3, 0.3, n_cells=32)
    assert all(0.09 - 1e-12 <= r["s"] <= 1 for r in rows)
