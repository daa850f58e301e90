import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodalab import hhp, strata
from nodalab.doubling import doubling_index
from nodalab.field import harmonic_polynomial_solution, polynomial_solution


def sphere_mean(f, dim: int) -> float:
    """Sphere average by product quadrature (exact for low-degree polynomials)."""
    if dim == 2:
        t = 2 * np.pi * np.arange(512) / 512
        return float(np.mean(f(np.stack([np.cos(t), np.sin(t)], axis=1))))
    z, w = np.polynomial.legendre.leggauss(32)
    phi = 2 * np.pi * np.arange(64) / 64
    Z, P = np.meshgrid(z, phi, indexing="ij")
    rho = np.sqrt(1 - Z ** 2)
    pts = np.stack([rho * np.cos(P), rho * np.sin(P), Z], axis=-1).reshape(-1, 3)
    W = np.repeat(w / 2, 64) / 64
    return float(W @ f(pts))


def axis_distance(P):
    return np.linalg.norm(np.atleast_2d(P)[:, :2], axis=1)


# ---------------------------------------------------------------------------
# best_symmetric_fit

def test_saddle3_is_exactly_1_symmetric_along_z(saddle3):
    fit = strata.best_symmetric_fit(saddle3, None, np.zeros(3), 0.5, 1)
    assert fit.defect <= 1e-8
    assert fit.degree == 2
    assert abs(abs(fit.V[0] @ [0, 0, 1]) - 1) <= 1e-8


def test_linear_is_n_minus_1_symmetric(linear2):
    fit = strata.best_symmetric_fit(linear2, None, np.zeros(2), 0.5, 1)
    assert fit.defect <= 1e-8
    assert fit.degree == 1
    assert abs(abs(fit.V[0] @ [0, 1]) - 1) <= 1e-8


@pytest.mark.parametrize("delta", [1e-3, 1e-2, 5e-2])
def test_mixed_defect_matches_projection_oracle(delta):
    P2 = hhp.HarmonicPolynomial.from_terms(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0})
    Q3 = hhp.HarmonicPolynomial.from_terms(3, {(0, 0, 3): 1.0, (2, 0, 1): -1.5, (0, 2, 1): -1.5})
    u = polynomial_solution([P2, Q3 * delta])
    r = 0.5
    a2 = sphere_mean(lambda p: P2(r * p) ** 2, 3)
    b2 = sphere_mean(lambda p: (delta * Q3(r * p)) ** 2, 3)
    expected = 2 - 2 * math.sqrt(a2 / (a2 + b2))
    fit = strata.best_symmetric_fit(u, None, np.zeros(3), r, 1)
    assert fit.degree == 2
    assert fit.defect == pytest.approx(expected, rel=1e-6, abs=1e-12)
    assert abs(fit.V[0] @ [0, 0, 1]) >= 1 - 1e-6
    assert fit.defect <= 2 * delta ** 2 * 10


@given(st.sampled_from([2, 3]), st.integers(0, 2 ** 31),
       st.lists(st.floats(0.1, 2.0), min_size=3, max_size=3))
@settings(max_examples=25)
def test_fit_optimality_k0(dim, seed, weights):
    # defect = total + 1 - 2 sqrt(best single-degree energy), energies from quadrature
    rng = np.random.default_rng(seed)
    parts = [hhp.random_harmonic(dim, d, rng) * w for d, w in zip((1, 2, 3), weights)]
    u = polynomial_solution(parts)
    r = 0.7
    e = np.array([sphere_mean(lambda p, P=P: P(r * p) ** 2, dim) for P in parts])
    e = e / e.sum()
    fit = strata.best_symmetric_fit(u, None, np.zeros(dim), r, 0)
    assert fit.trace_norm_sq == pytest.approx(1.0, abs=1e-8)
    assert fit.energy == pytest.approx(e.max(), abs=1e-8)
    assert fit.projection_residual == pytest.approx(1.0 - e.max(), abs=1e-8)
    assert fit.defect == pytest.approx(2 - 2 * math.sqrt(e.max()), abs=1e-8)
    assert fit.degree == 1 + int(np.argmax(e))


@given(st.sampled_from([2, 3]), st.integers(0, 2 ** 31))
@settings(max_examples=20)
def test_symmetry_defects_nondecreasing(dim, seed):
    rng = np.random.default_rng(seed)
    u = polynomial_solution([hhp.random_harmonic(dim, d, rng) for d in (1, 2)])
    dv = strata.symmetry_defects(u, None, rng.uniform(-0.2, 0.2, dim), 0.4, dim)
    assert np.all(np.diff(dv) >= 0)


def test_fit_rejects_bad_arguments(saddle2):
    with pytest.raises(ValueError):
        strata.best_symmetric_fit(saddle2, None, np.zeros(2), 0.5, 3)
    with pytest.raises(ValueError):
        strata.best_symmetric_fit(saddle2, None, np.zeros(2), 0.5, 0, d_max=13)


# ---------------------------------------------------------------------------
# is_symmetric

def test_is_symmetric_exact_cases(saddle3, linear2):
    assert strata.is_symmetric(saddle3, None, np.zeros(3), 0.5, 1, 1e-6)
    assert strata.is_symmetric(linear2, None, np.zeros(2), 0.5, 1, 1e-6)
    assert strata.is_symmetric(linear2, None, np.array([0.3, -0.2]), 0.25, 1, 1e-6)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=15)
def test_generic_degree2_not_fully_symmetric(seed):
    # k = n leaves only constants; a centered nonconstant window keeps defect >= 1
    u = polynomial_solution([hhp.random_harmonic(2, 2, np.random.default_rng(seed))])
    fit = strata.best_symmetric_fit(u, None, np.zeros(2), 0.5, 2)
    assert fit.defect >= 1.0 - 1e-9
    assert not strata.is_symmetric(u, None, np.zeros(2), 0.5, 2, 1e-3)


# ---------------------------------------------------------------------------
# quantitative_stratum

def saddle_defect_oracle(y, s):
    # u = x^2 - y^2: window = s grad.w + s^2 P(w); only the linear part is 1-symmetric in 2D
    ry = np.linalg.norm(y, axis=-1)
    return 2 - 4 * ry / np.sqrt(4 * ry ** 2 + s ** 2)


def test_stratum_concentrates_near_origin(saddle2):
    t = np.linspace(-0.3, 0.3, 13)
    pts = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    eta, r_min, r_max = 0.3, 0.05, 0.4
    res = strata.quantitative_stratum(saddle2, None, pts, 0, eta, r_min, r_max)
    # the defect decreases in s, so the smallest rung decides membership
    oracle = saddle_defect_oracle(pts, r_min) > eta
    assert np.array_equal(res.mask, oracle)
    assert res.mask[np.argmin(np.linalg.norm(pts, axis=1))]
    assert np.all(np.linalg.norm(res.members, axis=1) <= 0.05)
    assert np.allclose(res.min_defect, saddle_defect_oracle(pts, r_min), atol=1e-8)


def test_linear_stratum_is_empty(linear2):
    pts = np.random.default_rng(0).uniform(-0.3, 0.3, (20, 2))
    res = strata.quantitative_stratum(linear2, None, pts, 0, 1e-6, 0.05, 0.4)
    assert len(res.members) == 0


@given(st.integers(0, 1), st.integers(0, 1), st.floats(0.05, 0.5), st.floats(0.0, 1.0),
       st.integers(0, 2), st.integers(0, 2))
@settings(max_examples=20)
def test_stratum_nested_parameters(k, dk, eta, frac, j, dj):
    # k <= k', eta' <= eta, r <= r' gives S^k_{eta,r} inside S^k'_{eta',r'}
    u = polynomial_solution([hhp.HarmonicPolynomial.from_terms(3, {(2, 0, 0): 1.0, (0, 2, 0): -1.0}),
                             hhp.HarmonicPolynomial.from_terms(3, {(1, 1, 1): 0.5})])
    pts = np.random.default_rng(1).uniform(-0.3, 0.3, (12, 3))
    r_max = 0.4
    r, r2 = r_max * 2.0 ** -(j + dj), r_max * 2.0 ** -j
    small = strata.quantitative_stratum(u, None, pts, k, eta, r, r_max)
    big = strata.quantitative_stratum(u, None, pts, k + dk, eta * frac, r2, r_max)
    assert np.all(big.mask[small.mask])


def test_stratum_from_precomputed_defects(saddle2):
    pts = np.array([[0.0, 0.0], [0.25, 0.0]])
    scales = strata._ladder(0.05, 0.4)
    dv = strata.stratum_defects(saddle2, None, pts, scales, 1)
    res = strata.quantitative_stratum(saddle2, None, pts, 0, 0.3, 0.05, 0.4, defects=dv)
    assert res.mask.tolist() == [True, False]


# ---------------------------------------------------------------------------
# pinched_set and independence

def test_pinched_set_lies_on_axis(saddle3):
    V = strata.pinched_set(saddle3, None, np.zeros(3), 0.5, 2, 0.05, window=(0.05, 1.0))
    on_axis = axis_distance(V.candidates) <= 1e-12
    assert len(V.members) == int(on_axis.sum()) > 1
    assert np.all(axis_distance(V.members) <= 1e-12)
    assert abs(abs(V.plane[0] @ [0, 0, 1]) - 1) <= 1e-10
    # exact D field: D = 2 on the axis at every scale
    for y in V.members[:3]:
        assert doubling_index(saddle3, None, y, 0.1) == pytest.approx(2.0, abs=1e-10)


def test_pinched_set_empty_for_linear(linear2):
    V = strata.pinched_set(linear2, None, np.zeros(2), 0.5, 2, 0.05, window=(0.05, 1.0))
    assert len(V.members) == 0


def test_pinched_set_large_eps_keeps_everything(saddle2):
    V = strata.pinched_set(saddle2, None, np.zeros(2), 0.5, 2, 10.0, window=(0.05, 1.0))
    assert len(V.members) == len(V.candidates)


def test_independence_two_points():
    tau, r = 0.1, 0.5
    res = strata.independence_check(np.array([[0.0, 0.0], [tau * r, 0.0]]), 1, tau, r)
    assert res.independent and res.method == "k-subsets"
    assert res.refined_width == pytest.approx(tau * r / 2, rel=1e-6)


@pytest.mark.parametrize("count", [5, 40])
def test_independence_points_on_a_line(count):
    S = np.outer(np.linspace(-1, 1, count), [0.6, 0.8])
    assert not strata.independence_check(S, 2, 1e-6, 1.0).independent


@given(st.integers(0, 2 ** 31), st.floats(0.02, 0.3))
@settings(max_examples=30)
def test_independence_svd_branch(seed, tau):
    rng = np.random.default_rng(seed)
    r = 1.0
    frame = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    S = rng.uniform(-1, 1, (60, 2)) @ frame[:, :2].T + rng.uniform(-0.5, 0.5, (60, 1)) * tau * r * frame[:, 2]
    res = strata.independence_check(S, 2, tau, r)
    sv = np.linalg.svd(S - S.mean(axis=0), compute_uv=False)
    assert res.method == "svd-rms"
    assert res.width == pytest.approx(math.sqrt(np.sum(sv[1:] ** 2) / len(S)), rel=1e-9)
    if res.independent:
        # the RMS bound is sound: every line leaves a point at distance >= tau r
        for _ in range(20):
            o, d = rng.standard_normal(3) * 0.3, rng.standard_normal(3)
            d /= np.linalg.norm(d)
            D = S - o
            dist = np.linalg.norm(D - np.outer(D @ d, d), axis=1)
            assert dist.max() >= tau * r


# ---------------------------------------------------------------------------
# epsilon_regularity

@pytest.mark.parametrize("x", [(0.0, 0.0), (0.4, -0.7), (-2.0, 3.0)])
def test_eps_regularity_linear(linear2, x):
    res = strata.epsilon_regularity(linear2, None, np.array(x), 0.3, 0.05)
    assert res.not_critical and res.precondition_ok
    assert res.witness == pytest.approx(math.sqrt(2), rel=1e-9)


def test_eps_regularity_saddle_precondition_fails(saddle2):
    res = strata.epsilon_regularity(saddle2, None, np.zeros(2), 0.3, 0.05)
    assert not res.precondition_ok and not res.not_critical
    assert res.witness <= 1e-10


def test_eps_regularity_perturbed_linear():
    from nodalab.field import make_hoelder_field
    from nodalab.pde import Grid, solve_dirichlet
    fld = make_hoelder_field(0, 0.3, 0.5, 2, "radial_bump")
    u = solve_dirichlet(fld, Grid(2, (0.0, 0.0), 1.0, 128), lambda p: p[:, 0] + 0.2 * p[:, 1])
    res = strata.epsilon_regularity(u, fld, np.zeros(2), 0.05, 0.05)
    assert res.not_critical and res.precondition_ok


# ---------------------------------------------------------------------------
# cone_split_audit

def test_cone_split_axis_oracle(saddle3):
    rep = strata.cone_split_audit(saddle3, None, np.zeros(3), 0.5, 2, 0.01, 0.1, k=1, window=(0.05, 1.0))
    assert not rep.vacuous
    assert rep.independence.independent
    assert rep.uniform_defect <= 1e-6 and rep.symmetric_ok
    assert rep.containment == 1.0
    assert rep.lipschitz <= 1e-10


def test_cone_split_linear_vacuous(linear2):
    rep = strata.cone_split_audit(linear2, None, np.zeros(2), 0.5, 2, 0.01, 0.1, window=(0.05, 1.0))
    assert rep.vacuous and rep.symmetric_ok


# ---------------------------------------------------------------------------
# uniform symmetry on a pinched profile

def test_uniform_symmetry_on_pinched_profile():
    P2 = hhp.HarmonicPolynomial.from_terms(2, {(2, 0): 1.0, (0, 2): -1.0})
    P4 = hhp.HarmonicPolynomial.from_terms(2, {(4, 0): 1.0, (2, 2): -6.0, (0, 4): 1.0})
    u = polynomial_solution([P2, P4 * 0.02])
    r1, r2 = 0.2, 0.2 / 64
    D = [doubling_index(u, None, np.zeros(2), s) for s in np.geomspace(r1, r2, 13)]
    eps = max(abs(v - 2) for v in D)
    assert eps <= 1e-3
    rep = strata.uniform_symmetry_audit(u, None, np.zeros(2), 4 * r2, r1 / 4)
    assert rep.max_defect <= 10 * eps
    # pinching forces D within 8 eps of the integer on the inner window
    assert np.all(np.abs(rep.D - 2) <= 8 * eps)


# ---------------------------------------------------------------------------
# detect_critical_set

def test_detect_saddle_single_cluster(saddle2):
    cells = strata.detect_critical_set(saddle2, None, (np.zeros(2), 0.5), levels=6)
    diam = cells.cell_size * math.sqrt(2)
    assert len(cells) >= 1
    assert np.all(np.linalg.norm(cells.centers, axis=1) <= diam)


def test_detect_linear_empty(linear2):
    assert len(strata.detect_critical_set(linear2, None, (np.zeros(2), 0.5), levels=6)) == 0


def test_detect_axis_hausdorff(saddle3):
    cells = strata.detect_critical_set(saddle3, None, (np.zeros(3), 0.5), levels=4)
    diam = cells.cell_size * math.sqrt(3)
    assert np.all(axis_distance(cells.centers) <= 2 * diam)
    z = np.linspace(-0.5 + cells.cell_size, 0.5 - cells.cell_size, 41)
    gaps = [np.min(np.linalg.norm(cells.centers - [0, 0, t], axis=1)) for t in z]
    assert max(gaps) <= 2 * diam


@given(st.floats(-0.35, 0.35), st.floats(-0.35, 0.35))
@settings(max_examples=20)
def test_detect_contains_shifted_critical_point(a, b):
    P = hhp.HarmonicPolynomial.from_terms(2, {(2, 0): 1.0, (1, 1): 0.7, (0, 2): -1.0})
    u = harmonic_polynomial_solution(P, shift=(a, b))
    cells = strata.detect_critical_set(u, None, (np.zeros(2), 0.5), levels=5)
    inside = np.all(np.abs(cells.centers - [a, b]) <= cells.cell_size / 2 + 1e-12, axis=1)
    assert inside.any()


def test_detect_singular_mode_subset(saddle2):
    crit = strata.detect_critical_set(saddle2, None, (np.zeros(2), 0.5), levels=5)
    sing = strata.detect_critical_set(saddle2, None, (np.zeros(2), 0.5), levels=5, mode="singular")
    assert 1 <= len(sing) <= len(crit)
