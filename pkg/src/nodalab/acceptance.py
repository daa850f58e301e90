"""Acceptance suite: ten pass/fail criteria with their tolerances and time budgets.

Each criterion returns a dictionary of metrics; the pass decision is made
from those metrics and the measured wall time.  Criteria 1-9 are
independent and may run concurrently; results are aggregated in criterion
order and hashed from their canonical JSON, which criterion 10 compares
across repeated runs and thread counts.
"""
from __future__ import annotations

import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import approx, cover, doubling, green, hhp, strata
from .field import AnalyticSolution, harmonic_polynomial_solution, make_hoelder_field, polynomial_solution
from .io import canonical_json, sha256_bytes, write_csv, write_json
from .pde import Grid, solve_dirichlet

__all__ = ["CriterionResult", "AcceptanceReport", "CRITERIA", "run_suite", "run_acceptance"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float
    budget: float
    metrics: dict
    detail: str = ""
    warnings: list = dc_field(default_factory=list)

    @property
    def digest(self) -> str:
        return sha256_bytes(canonical_json({"n": self.number, "passed": self.passed, "metrics": self.metrics})
                            .encode())

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f} s / {self.budget:g} s)"


# ---------------------------------------------------------------------------
# solutions shared by several criteria (memoized per suite run)

class _Solutions:
    def __init__(self):
        self._cache: dict = {}
        self._locks: dict = {}
        self._guard = threading.Lock()

    def get(self, key, build):
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]


def _hp(dim: int, terms: dict):
    return harmonic_polynomial_solution(hhp.HarmonicPolynomial.from_terms(dim, terms))


def _sq(dim: int):
    z = (0,) * (dim - 2)
    return _hp(dim, {(2, 0) + z: 1.0, (0, 2) + z: -1.0})


def _bump_solve(sols: _Solutions, alpha: float, boundary: str, lam: float = 0.3, n_cells: int = 512,
                x0=(0.0, 0.0)):
    def build():
        fld = make_hoelder_field(0, lam, alpha, 2, "radial_bump", x0=list(x0))
        grid = Grid(2, (0.0, 0.0), 1.0, n_cells)
        return solve_dirichlet(fld, grid, BOUNDARIES[boundary]), fld
    return sols.get(("bump", alpha, boundary, lam, n_cells, tuple(x0)), build)


BOUNDARIES = {
    "generic": lambda p: p[:, 0] + 0.5 * (p[:, 0] ** 2 - p[:, 1] ** 2) + 0.3 * p[:, 1],
    "saddle": lambda p: p[:, 0] ** 2 - p[:, 1] ** 2,
    "tilted": lambda p: 0.4 * p[:, 0] + p[:, 0] * p[:, 1] + 0.2 * p[:, 1],
}


def _random3d(sols: _Solutions):
    def build():
        fld = make_hoelder_field(3, 0.2, 0.5, 3, "random_smoothed", drift=False)
        grid = Grid(3, (0.0, 0.0, 0.0), 1.0, 64)
        return solve_dirichlet(fld, grid, BOUNDARIES["saddle"]), fld
    return sols.get("random3d", build)


# ---------------------------------------------------------------------------
# criteria

def crit_hhp(sols) -> tuple[bool, dict, str]:
    rng = np.random.default_rng(11)
    gram = grad = 0.0
    dir_worst = -np.inf
    for dim in (2, 3):
        e1 = np.eye(dim)[0]
        for d in range(0, 11):
            B = hhp.basis(dim, d)
            G = np.array([[hhp.sphere_inner(p, q) for q in B] for p in B])
            gram = max(gram, float(np.max(np.abs(G - np.eye(len(B))))))
            if d == 0:
                continue
            for _ in range(3):
                P1, P2 = hhp.random_harmonic(dim, d, rng), hhp.random_harmonic(dim, d, rng)
                lhs, rhs = hhp.gradient_identity_check(P1, P2)
                grad = max(grad, abs(lhs - rhs) / (d * (2 * d + dim - 2)))
                K = hhp.invariant_subspace(dim, d, e1[None])
                c = rng.standard_normal(hhp.space_dim(dim, d))
                c = c - K @ (K.T @ c)
                P = hhp.HarmonicPolynomial(dim, d, c / np.linalg.norm(c))
                # relative excess of |P| over |d_1 P|
                dir_worst = max(dir_worst, (P.norm() - hhp.directional_norm(P, e1)) / P.norm())
    ok = gram <= 1e-10 and grad <= 1e-10 and dir_worst <= 1e-10
    m = {"gram_max_error": gram, "gradient_identity_rel_error": grad, "directional_excess": dir_worst}
    return ok, m, f"Gram {gram:.1e}, gradient identity {grad:.1e}, |P|-|d1 P| excess {dir_worst:.2e}"


def _exp_cos():
    def f(p):
        return np.exp(p[..., 0]) * np.cos(p[..., 1])

    def g(p):
        e = np.exp(p[..., 0])
        return np.stack([e * np.cos(p[..., 1]), -e * np.sin(p[..., 1])], axis=-1)
    return AnalyticSolution(2, f, g, {"name": "exp(x)cos(y)"})


def crit_doubling(sols) -> tuple[bool, dict, str]:
    rng = np.random.default_rng(12)
    # ten rungs 16 .. 2^-5: the degree-8 window stays above the degeneracy threshold
    ladder = 16.0 * 2.0 ** -np.arange(10)
    dev = 0.0
    for dim in (2, 3):
        for d in range(1, 9):
            u = harmonic_polynomial_solution(hhp.random_harmonic(dim, d, rng))
            for r in ladder:
                dev = max(dev, abs(doubling.doubling_index(u, None, np.zeros(dim), float(r)) - d))
    x2 = hhp.from_monomial_list(2, [((1, 0), 1.0)])
    q2 = hhp.from_monomial_list(2, [((2, 0), 1.0), ((0, 2), -1.0)])
    x3 = hhp.from_monomial_list(3, [((0, 1, 0), 1.0)])
    q3 = hhp.from_monomial_list(3, [((1, 1, 0), 1.0), ((0, 0, 2), 1.0), ((2, 0, 0), -0.5), ((0, 2, 0), -0.5)])
    oracles = [(polynomial_solution([x2, q2]), [(0, 0), (0.3, -0.2)]),
               (_exp_cos(), [(0, 0), (0.2, 0.5)]),
               (polynomial_solution([x3, q3]), [(0, 0, 0), (0.1, 0.2, -0.3)])]
    sandwich = -np.inf
    hid = 0.0
    for u, pts in oracles:
        for x in pts:
            x = np.asarray(x, dtype=float)
            for r in 2.0 ** -np.arange(1, 8):
                D = doubling.doubling_index(u, None, x, float(r))
                N1, N2 = doubling.frequency(u, x, float(r)), doubling.frequency(u, x, float(2 * r))
                sandwich = max(sandwich, N1 - D, D - N2)
            hid = max(hid, doubling.h_identity_audit(u, x, 2.0 ** -6, 0.5))
    ok = dev <= 1e-6 and sandwich <= 1e-4 and hid <= 1e-3
    m = {"hhp_max_deviation": dev, "sandwich_excess": sandwich, "h_identity_residual": hid}
    return ok, m, f"|D-d| {dev:.1e}, sandwich excess {sandwich:.1e}, H-identity {hid:.1e}"


MONO_SCENARIOS = [(0.3, "generic", (0.0, 0.0)), (0.5, "generic", (0.0, 0.0)), (0.7, "generic", (0.0, 0.0)),
                  (0.5, "tilted", (0.2, -0.1)), (0.3, "saddle", (0.0, 0.0))]


def crit_monotonicity(sols) -> tuple[bool, dict, str]:
    violations = 0
    min_small = np.inf
    rows = []
    for si, (alpha, bd, x0) in enumerate(MONO_SCENARIOS):
        u, fld = _bump_solve(sols, alpha, bd, x0=x0)
        rng = np.random.default_rng(100 + si)
        pts = np.vstack([np.asarray(x0), rng.uniform(-0.5, 0.5, (9, 2))])
        for x in pts:
            p = doubling.profile(u, fld, x, 2.0 ** -4, 6)
            rep = doubling.almost_monotonicity_audit(p, 0.1)
            violations += len(rep.violations)
            min_small = min(min_small, rep.min_small_scale_D)
            rows.append([si, alpha, bd, *x, len(rep.violations), rep.min_small_scale_D, int(p.valid.sum())])
    ok = violations == 0 and min_small >= 0.9
    m = {"violations": violations, "min_small_scale_D": min_small, "profiles": rows}
    return ok, m, f"{violations} violations over {len(rows)} profiles, min small-scale D {min_small:.3f}"


def crit_harmonic_approx(sols) -> tuple[bool, dict, str]:
    rs = 2.0 ** -np.arange(3, 8)
    out = {}
    ok = True
    worst_close = 0.0
    for alpha in (0.3, 0.5, 0.7):
        u, fld = _bump_solve(sols, alpha, "generic")
        sup, close = [], 0.0
        for r in rs:
            h, rep = approx.harmonic_approximation(u, fld, np.zeros(2), float(r))
            sup.append(rep.sup_distance)
            close = max(close, max(row["diff"] for row in approx.closeness_audit(u, fld, np.zeros(2), float(r),
                                                                              0.1, h=h)))
        slope = approx.fit_slope(rs, sup)
        mono = all(a > b for a, b in zip(sup, sup[1:]))
        ok &= mono and slope >= 0.8 * alpha and close <= 0.1
        worst_close = max(worst_close, close)
        out[f"alpha={alpha}"] = {"sup": sup, "slope": slope, "monotone": mono, "closeness_max": close}
    det = ", ".join(f"a={a}: slope {out[f'alpha={a}']['slope']:.2f}" for a in (0.3, 0.5, 0.7))
    return ok, out, f"{det}; closeness max {worst_close:.3f}"


def crit_uniqueness(sols) -> tuple[bool, dict, str]:
    u, fld = _bump_solve(sols, 0.5, "saddle")
    r1, r2, eps = 0.25, 2.0 ** -7, 1e-3
    rep = strata.uniform_symmetry_audit(u, fld, np.zeros(2), 4 * r2, r1 / 4, k=0, d_max=6)
    md = rep.max_defect
    ok = md <= 2e-2
    m = {"max_defect": md, "target": 10 * eps, "threshold": 2e-2, "degree": rep.P.degree,
         "pinch_spread": rep.pinch_spread, "defects": rep.defects}
    return ok, m, f"fixed-P defect {md:.2e} (target {10 * eps:g}, pass <= 2e-2), D spread {rep.pinch_spread:.3f}"


def crit_green(sols) -> tuple[bool, dict, str]:
    rng = np.random.default_rng(13)
    y = np.array([0.3, -0.4, 0.866])
    v = rng.standard_normal((64, 3))
    x = 0.25 * np.linalg.norm(y) * v / np.linalg.norm(v, axis=1, keepdims=True)
    errs = green.partial_sum_errors(y, x, 10)
    ratios = errs[1:] / errs[:-1]
    exps = [green.scaling_exponent(y, k) for k in range(9)]
    exp_err = max(abs(e - (2 - 3 - k)) for k, e in enumerate(exps))
    gexp = [green.gradient_scaling_exponents(k) for k in range(1, 7)]
    gerr = max(max(abs(ey - (1 - 3 - k)), abs(ex - k)) for k, (ey, ex) in zip(range(1, 7), gexp))
    finite = bool(np.all(np.isfinite(errs)))
    ok = finite and float(np.max(ratios)) <= 0.6 and exp_err <= 0.05 and gerr <= 0.05
    m = {"ratios": ratios, "max_ratio": float(np.max(ratios)), "exponents": exps, "exponent_error": exp_err,
         "gradient_exponent_error": gerr}
    return ok, m, f"max ratio {np.max(ratios):.3f}, exponent error {exp_err:.1e}, gradient exponents {gerr:.1e}"


def split_cases(seed: int = 14) -> list:
    """Fifty symbolic cases with expected outcomes known by construction."""
    rng = np.random.default_rng(seed)
    cases = []
    # invariant along x0: polynomials of (x, y) lifted to 3D, x0 along z
    for i in range(20):
        d = 2 + i % 5
        p2 = hhp.random_harmonic(2, d, rng)
        terms = {tuple(e) + (0,): float(c) for e, c in zip(hhp.monomials(2, d), hhp.as_poly(p2).coeffs)}
        P = hhp.HomogeneousPoly.from_terms(3, terms)
        x0 = np.array([0.0, 0.0, rng.uniform(0.5, 2.0) * rng.choice([-1, 1])])
        cases.append((P, x0, True))
    # rotated version: invariant along a general direction
    for i in range(5):
        d = 2 + i % 3
        c, s = math.cos(0.3 * (i + 1)), math.sin(0.3 * (i + 1))
        # Re((x cos - z sin) + i y)^d is invariant along (sin, 0, cos)
        u = hhp.from_monomial_list(3, [((1, 0, 0), c), ((0, 0, 1), -s)])
        w = hhp.from_monomial_list(3, [((0, 1, 0), 1.0)])
        re, im = u, w
        for _ in range(d - 1):
            re, im = re * u - im * w, re * w + im * u
        cases.append((re, np.array([s, 0.0, c]), True))
    # generic harmonic polynomials of degree >= 2 with a generic second vertex
    for i in range(20):
        dim = 2 + i % 2
        d = 2 + i % 4
        P = hhp.random_harmonic(dim, d, rng)
        x0 = rng.standard_normal(dim)
        cases.append((P, x0, False))
    # linear polynomials always split
    for i in range(5):
        dim = 2 + i % 2
        P = hhp.random_harmonic(dim, 1, rng)
        cases.append((P, rng.standard_normal(dim), True))
    return cases


def crit_cone(sols) -> tuple[bool, dict, str]:
    wrong = sum(hhp.polynomial_split_test(P, x0).splits != expect for P, x0, expect in split_cases())
    u = _sq(3)
    rep = strata.cone_split_audit(u, None, np.zeros(3), 0.5, 2, 0.1, 0.3, k=1)
    up, fld = _random3d(sols)
    rp = strata.cone_split_audit(up, fld, np.zeros(3), 0.2, 2, 0.05, 0.3, k=1, window=(0.35, 1.5), per_axis=9)
    ok = (wrong == 0 and rep.containment == 1.0 and rep.lipschitz <= 0.12 and rp.containment >= 0.95
          and rp.lipschitz <= 0.12 and len(rp.pinched.members) > 1)
    m = {"split_cases": 50, "split_wrong": wrong, "oracle_containment": rep.containment,
         "oracle_lipschitz": rep.lipschitz, "oracle_members": len(rep.pinched.members),
         "perturbed_containment": rp.containment, "perturbed_lipschitz": rp.lipschitz,
         "perturbed_members": len(rp.pinched.members), "perturbed_uniform_defect": rp.uniform_defect}
    return ok, m, (f"split {50 - wrong}/50; oracle containment {rep.containment:.2f}, Lip {rep.lipschitz:.2e}; "
                   f"perturbed containment {rp.containment:.2f}, Lip {rp.lipschitz:.2e}")


def _critical_targets(sols):
    """``(name, u, field, (center, radius), Lambda, detection levels)`` for criteria 8 and 9."""
    z3 = _hp(2, {(3, 0): 1.0, (1, 2): -3.0})
    us, fs = _bump_solve(sols, 0.5, "saddle")
    ut, ft = _bump_solve(sols, 0.5, "tilted", x0=(0.2, -0.1))
    u3, f3 = _random3d(sols)
    return [("x2-y2 (n=2)", _sq(2), None, (np.zeros(2), 1.0), 2.0, 9),
            ("x2-y2 (n=3)", _sq(3), None, (np.zeros(3), 1.0), 2.0, 7),
            ("Re z^3 (n=2)", z3, None, (np.zeros(2), 1.0), 3.0, 9),
            ("bump saddle (n=2)", us, fs, (np.zeros(2), 0.5), 2.0, 9),
            ("bump tilted saddle (n=2)", ut, ft, (np.zeros(2), 0.5), 2.0, 9),
            ("random x2-y2 (n=3)", u3, f3, (np.zeros(3), 0.5), 2.0, 7)]


def crit_minkowski(sols) -> tuple[bool, dict, str]:
    rs = 2.0 ** -np.arange(3, 8)
    out = {}
    ok = True
    for name, u, fld, (c, R), _, levels in _critical_targets(sols):
        cells = strata.detect_critical_set(u, fld, (c, R), levels=levels, init_cells=int(round(8 * R)))
        vols = [cover.minkowski_content(cells, float(r), (c, R)) for r in rs]
        slope = approx.fit_slope(rs, vols)
        out[name] = {"slope": slope, "cells": len(cells), "volumes": vols}
        ok &= slope >= 1.8
    for name, u, k in (("S^0 x2-y2 (n=2)", _sq(2), 0), ("S^1 x2-y2 (n=3)", _sq(3), 1)):
        rep = cover.strata_volume_audit(u, None, k, 0.1, rs)
        out[name] = {"slope": rep.slope, "members": rep.counts, "content": rep.content}
        ok &= (not rep.empty) and rep.slope >= (u.dim - k) - 0.2
    det = ", ".join(f"{k}: {v['slope']:.2f}" for k, v in out.items())
    return ok, out, det


def crit_cover(sols) -> tuple[bool, dict, str]:
    out = {}
    ok = True
    for name, u, fld, (c, R), lam, _ in _critical_targets(sols):
        floors = [R * 2.0 ** -j for j in (4, 5, 6)]
        res = []
        for rf in floors:
            cv = cover.critical_cover(u, fld, rf, Lambda=lam, region=(c, R), r0=0.25 * R)
            res.append({"r_floor": rf, "count": cv.count, "content": cv.content, "coverage": cv.coverage(),
                        "disjoint": cv.disjointness_ok(), "pruned": cv.pruned, "target": len(cv.target)})
        changes = [abs(b["content"] - a["content"]) / a["content"] for a, b in zip(res, res[1:]) if a["content"] > 0]
        good = (all(r["coverage"] == 1.0 and r["disjoint"] for r in res) and all(ch <= 0.2 for ch in changes)
                and all(r["target"] > 0 for r in res))
        ok &= good
        out[name] = {"runs": res, "max_change": max(changes) if changes else 0.0, "ok": good}
    det = ", ".join(f"{k}: change {v['max_change']:.2f}" for k, v in out.items())
    return ok, out, det + "; coverage 100% and cores disjoint" if ok else det


CRITERIA = [
    (1, "HHP exactness", 5.0, crit_hhp),
    (2, "Doubling exactness", 30.0, crit_doubling),
    (3, "Almost monotonicity", 600.0, crit_monotonicity),
    (4, "Harmonic approximation", 300.0, crit_harmonic_approx),
    (5, "Quantitative uniqueness", 180.0, crit_uniqueness),
    (6, "Green's kernel", 60.0, crit_green),
    (7, "Cone splitting", 120.0, crit_cone),
    (8, "Minkowski exponents", 600.0, crit_minkowski),
    (9, "Covering soundness and stability", 600.0, crit_cover),
]


def _run_criterion(entry, sols) -> CriterionResult:
    n, title, budget, fn = entry
    t0 = time.perf_counter()
    try:
        ok, metrics, detail = fn(sols)
    except Exception as exc:  # a crash is a failed criterion, reported with its cause
        ok, metrics, detail = False, {"error": f"{type(exc).__name__}: {exc}"}, f"error: {type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    return CriterionResult(n, title, bool(ok), dt, budget, metrics, detail)


def run_suite(threads: int = 1, only=None) -> list:
    """Run criteria 1-9 (or the numbers in ``only``), concurrently when ``threads > 1``."""
    selected = [c for c in CRITERIA if only is None or c[0] in only]
    sols = _Solutions()
    if threads <= 1:
        return [_run_criterion(s, sols) for s in selected]
    # the longest criteria first so that concurrency shortens the wall time
    order = sorted(selected, key=lambda s: -s[2])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = {s[0]: pool.submit(_run_criterion, s, sols) for s in order}
        return [futs[s[0]].result() for s in selected]


@dataclass
class AcceptanceReport:
    results: list
    hashes: dict
    wall_time: float

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def any_warnings(self) -> bool:
        return any(r.warnings for r in self.results)


def run_acceptance(threads: int | None = None, determinism: bool = True, out=None, echo=None,
                   only=None) -> AcceptanceReport:
    """Run the suite once sequentially (timed), then twice with ``threads`` workers for criterion 10.

    Time budgets are judged on the sequential run.  With ``determinism``
    off, criterion 10 is reported as failed (not run).
    """
    # at least two workers so the comparison is always 1 thread against several
    threads = max(2, threads or os.cpu_count() or 1)
    t0 = time.perf_counter()
    base = run_suite(1, only)
    for r in base:
        if r.seconds > r.budget:
            r.passed = False
            r.detail += f"; over the {r.budget:g} s budget"
    for r in base:
        if echo:
            echo(r.line())
    hashes = {"sequential": [r.digest for r in base]}
    if determinism:
        t1 = time.perf_counter()
        a = run_suite(threads, only)
        b = run_suite(threads, only)
        hashes["threaded_1"] = [r.digest for r in a]
        hashes["threaded_2"] = [r.digest for r in b]
        same_threads = hashes["sequential"] == hashes["threaded_1"]
        same_runs = hashes["threaded_1"] == hashes["threaded_2"]
        ok = same_threads and same_runs
        mism = [base[i].number for i in range(len(base))
                if len({hashes[k][i] for k in ("sequential", "threaded_1", "threaded_2")}) > 1]
        detail = (f"1 vs {threads} threads {'identical' if same_threads else 'differ'}, "
                  f"two {threads}-thread runs {'identical' if same_runs else 'differ'}"
                  + (f"; differing criteria {mism}" if mism else ""))
        r10 = CriterionResult(10, "Determinism", ok, time.perf_counter() - t1, float("inf"),
                              {"threads": threads, "mismatched": mism}, detail)
    else:
        r10 = CriterionResult(10, "Determinism", False, 0.0, float("inf"), {}, "not run")
    if echo:
        echo(r10.line())
    results = base + [r10]
    rep = AcceptanceReport(results, hashes, time.perf_counter() - t0)
    if out is not None:
        out = Path(out)
        write_csv(out / "acceptance.csv", ["criterion", "title", "passed", "seconds", "budget", "digest", "detail"],
                  [[r.number, r.title, r.passed, r.seconds, r.budget, r.digest, r.detail] for r in results])
        write_json(out / "acceptance_metrics.json", {str(r.number): r.metrics for r in results})
    return rep
