"""Symmetry fits, quantitative strata, pinched sets and critical-set detection."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from . import hhp
from .doubling import doubling_index, rescale
from .errors import DegenerateWindowError, DomainError
from .field import CoefficientField
from .quadrature import sphere_rule

C2_BASE = 1e3

__all__ = [
    "c2",
    "SymmetryFit",
    "best_symmetric_fit",
    "symmetry_defects",
    "is_symmetric",
    "fixed_polynomial_defect",
    "uniform_symmetry_audit",
    "StratumResult",
    "quantitative_stratum",
    "PinchedSet",
    "pinched_set",
    "IndependenceResult",
    "independence_check",
    "EpsRegularity",
    "epsilon_regularity",
    "ConeSplitReport",
    "cone_split_audit",
    "graph_lipschitz",
    "fit_plane",
    "CriticalCells",
    "detect_critical_set",
]


def c2(lam: float) -> float:
    """``C_2(lambda) = 10^3 (1 + lambda)^(1/2)``."""
    return C2_BASE * math.sqrt(1.0 + lam)


# ---------------------------------------------------------------------------
# symmetric fits

@lru_cache(maxsize=None)
def _basis_on_nodes(dim: int, d: int) -> np.ndarray:
    nodes, _ = sphere_rule(dim)
    B = np.stack([P(nodes) for P in hhp.basis(dim, d)], axis=1)
    B.setflags(write=False)
    return B


def _trace_coefficients(w, d_max: int) -> tuple[float, list]:
    # sphere mean square of the window and its projections on each degree
    dim = w.dim
    nodes, wts = sphere_rule(dim)
    vals = np.asarray(w(nodes))
    total = float(wts @ vals ** 2)
    coeffs = [_basis_on_nodes(dim, d).T @ (wts * vals) for d in range(d_max + 1)]
    return total, coeffs


def _gram(dim: int, d: int, c: np.ndarray) -> np.ndarray:
    if d == 0:
        return np.zeros((dim, dim))
    G = np.stack([hhp._derivative_matrix(dim, d, i) @ c for i in range(dim)])
    return G @ G.T


def _plane_energy(dim: int, d: int, c: np.ndarray, V: np.ndarray) -> tuple[float, np.ndarray]:
    K = hhp.invariant_subspace(dim, d, V) if len(V) else np.eye(len(c))
    proj = K @ (K.T @ c)
    return float(proj @ proj), proj


def _orthonormal_frame(dirs: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(np.atleast_2d(dirs).T)
    return q.T


def _net_planes(dim: int, k: int, step_deg: float = 15.0) -> list[np.ndarray]:
    # 15-degree net over k-planes (lines or their orthogonal complements)
    if k == 0 or k == dim:
        return [np.zeros((0, dim))] if k == 0 else [np.eye(dim)]
    dirs = []
    if dim == 2:
        for t in np.arange(0.0, 180.0, step_deg):
            a = math.radians(t)
            dirs.append(np.array([math.cos(a), math.sin(a)]))
    else:
        for th in np.arange(0.0, 90.0 + 1e-9, step_deg):
            t = math.radians(th)
            nphi = 1 if th == 0 else max(1, int(round(360.0 * math.sin(t) / step_deg)))
            for j in range(nphi):
                if th == 90.0 and j * 360.0 / nphi >= 180.0:
                    continue
                f = 2 * math.pi * j / nphi
                dirs.append(np.array([math.sin(t) * math.cos(f), math.sin(t) * math.sin(f), math.cos(t)]))
    if k == 1:
        return [v[None, :] for v in dirs]
    # k = 2 in 3D: plane orthogonal to each net normal
    return [np.linalg.svd(v[None, :])[2][1:] for v in dirs]


def _angles_to_plane(dim: int, k: int, ang: np.ndarray) -> np.ndarray:
    if dim == 2:
        v = np.array([math.cos(ang[0]), math.sin(ang[0])])
    else:
        t, f = ang
        v = np.array([math.sin(t) * math.cos(f), math.sin(t) * math.sin(f), math.cos(t)])
    if k == 1:
        return v[None, :]
    return np.linalg.svd(v[None, :])[2][1:]


def _plane_to_angles(dim: int, k: int, V: np.ndarray) -> np.ndarray:
    v = V[0] if k == 1 else np.linalg.svd(V)[2][-1]
    if dim == 2:
        return np.array([math.atan2(v[1], v[0])])
    return np.array([math.acos(np.clip(v[2], -1, 1)), math.atan2(v[1], v[0])])


@dataclass
class SymmetryFit:
    """Best normalized ``k``-symmetric homogeneous harmonic fit of a window.

    ``defect`` is the sphere mean square of ``window - P`` with ``P``
    normalized; ``projection_residual`` is the squared norm of the trace minus
    the captured projection energy (the unnormalized least-squares residual).
    """

    x: np.ndarray
    r: float
    k: int
    degree: int
    P: hhp.HarmonicPolynomial | None
    V: np.ndarray
    defect: float
    projection_residual: float
    trace_norm_sq: float
    energy: float
    method: str = "gram"


def _fit_from_coeffs(dim: int, k: int, total: float, coeffs: list, d_max: int, x, r) -> SymmetryFit:
    best = None
    # the plane-restricted energy never exceeds the full degree energy, so
    # visiting degrees by decreasing energy lets weak degrees be skipped
    order = sorted(range(d_max + 1), key=lambda d: (-float(coeffs[d] @ coeffs[d]), d))
    for d in order:
        c = coeffs[d]
        if best is not None and float(c @ c) <= best[0]:
            continue
        if k == dim - 1 and d >= 2:
            # a harmonic polynomial of one variable has degree at most one
            continue
        if k == 0:
            cand = [(float(c @ c), c, np.zeros((0, dim)), "projection")]
        elif k >= dim:
            cand = [(float(c @ c), c, np.eye(dim), "projection")] if d == 0 else []
        else:
            M = _gram(dim, d, c)
            ev, evec = np.linalg.eigh(M)
            V0 = evec[:, :k].T
            e0, p0 = _plane_energy(dim, d, c, V0)
            cand = [(e0, p0, V0, "gram")]
            near_tie = ev[k] <= 1.1 * ev[k - 1] + 1e-14 if k < dim else False
            if d > 0 and near_tie and float(c @ c) > 1e-28 * total:
                best_net = max(((_plane_energy(dim, d, c, V)[0], V) for V in _net_planes(dim, k)),
                               key=lambda t: t[0])
                res = minimize(lambda a: -_plane_energy(dim, d, c, _angles_to_plane(dim, k, a))[0],
                               _plane_to_angles(dim, k, best_net[1]), method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 400})
                Vr = _angles_to_plane(dim, k, res.x)
                er, pr = _plane_energy(dim, d, c, Vr)
                cand.append((er, pr, Vr, "net"))
        for e, p, V, how in cand:
            if best is None or e > best[0] + 1e-15 or (abs(e - best[0]) <= 1e-15 and d < best[3]):
                best = (e, p, V, d, how)
    e, p, V, d, how = best
    if e > 0:
        P = hhp.HarmonicPolynomial(dim, d, p / math.sqrt(e))
        defect = total + 1.0 - 2.0 * math.sqrt(e)
    else:
        P = None
        defect = total + 1.0
    Vf = _orthonormal_frame(V) if len(V) else V
    return SymmetryFit(np.asarray(x, dtype=float), float(r), k, d, P, Vf, max(defect, 0.0),
                       max(total - e, 0.0), total, e, how)


def best_symmetric_fit(u, fld: CoefficientField | None, x, r: float, k: int, d_max: int = 6,
                       mode: str = "centered") -> SymmetryFit:
    """Fit the window ``u_{x,r}`` by a normalized ``k``-symmetric homogeneous harmonic polynomial.

    Parameters
    ----------
    k : int
        Dimension of the invariance plane, ``0 <= k <= dim``.
    d_max : int
        Largest degree considered (at most 12).

    Notes
    -----
    For ``k >= 1`` the plane is spanned by the ``k`` smallest eigenvectors of
    the gradient Gram matrix of each degree's projection; when eigenvalues
    ``k-1`` and ``k`` lie within 10% a 15-degree net plus local refinement is
    searched as well.  The plane choice is a heuristic; the defect is exact
    for the chosen degree and plane.
    """
    if not 0 <= d_max <= 12:
        raise ValueError("d_max must lie in [0, 12]")
    w = rescale(u, fld, x, r, mode)
    if not 0 <= k <= w.dim:
        raise ValueError("k must lie in [0, dim]")
    total, coeffs = _trace_coefficients(w, d_max)
    return _fit_from_coeffs(w.dim, k, total, coeffs, d_max, x, r)


def symmetry_defects(u, fld, x, r: float, kmax: int, d_max: int = 6, mode: str = "centered") -> np.ndarray:
    """Defects of the best ``j``-symmetric fits for ``j = 0..kmax``, made nondecreasing in ``j``.

    Every ``j+1``-symmetric polynomial is ``j``-symmetric, so the true
    infimum is nondecreasing in ``j``; a running maximum keeps the heuristic
    plane search consistent with that.
    """
    w = rescale(u, fld, x, r, mode)
    total, coeffs = _trace_coefficients(w, d_max)
    raw = [_fit_from_coeffs(w.dim, j, total, coeffs, d_max, x, r).defect for j in range(kmax + 1)]
    return np.maximum.accumulate(np.asarray(raw))


def is_symmetric(u, fld, x, r: float, k: int, eta: float, d_max: int = 6) -> bool:
    return best_symmetric_fit(u, fld, x, r, k, d_max).defect <= eta


def fixed_polynomial_defect(u, fld, x, r: float, P, mode: str = "centered") -> float:
    """Sphere mean square of ``u_{x,r} - P`` for a given normalized ``P``."""
    w = rescale(u, fld, x, r, mode)
    nodes, wts = sphere_rule(w.dim)
    return float(wts @ (np.asarray(w(nodes)) - P(nodes)) ** 2)


@dataclass
class UniformSymmetry:
    P: hhp.HarmonicPolynomial
    scales: np.ndarray
    defects: np.ndarray
    D: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defects))

    @property
    def pinch_spread(self) -> float:
        return float(np.max(self.D) - np.min(self.D))


def uniform_symmetry_audit(u, fld, x, s_lo: float, s_hi: float, k: int = 0, d_max: int = 6,
                           P=None, rungs: int = 9) -> UniformSymmetry:
    """Defect of one fixed polynomial across ``s`` in ``[s_lo, s_hi]`` (geometric ladder).

    Without ``P`` the fit at the geometric mid-scale is used.
    """
    scales = np.geomspace(s_hi, s_lo, rungs)
    if P is None:
        P = best_symmetric_fit(u, fld, x, float(np.sqrt(s_lo * s_hi)), k, d_max).P
    defects = np.array([fixed_polynomial_defect(u, fld, x, float(s), P) for s in scales])
    D = np.array([doubling_index(u, fld, x, float(s)) for s in scales])
    return UniformSymmetry(P, scales, defects, D)


# ---------------------------------------------------------------------------
# strata

@dataclass
class StratumResult:
    points: np.ndarray
    mask: np.ndarray
    min_defect: np.ndarray
    scales: np.ndarray
    k: int
    eta: float

    @property
    def members(self) -> np.ndarray:
        return self.points[self.mask]


def _ladder(r_min: float, r_max: float) -> np.ndarray:
    m = int(math.floor(math.log2(r_max / r_min) + 1e-9))
    return r_max * 2.0 ** -np.arange(m + 1)


def quantitative_stratum(u, fld, points, k: int, eta: float, r_min: float, r_max: float,
                         d_max: int = 6, defects: np.ndarray | None = None,
                         cache: dict | None = None) -> StratumResult:
    """Points of ``points`` that are not ``(k+1, eta, s)``-symmetric at any ladder scale ``s``.

    The ladder is ``r_max 2^-i >= r_min``.  ``defects`` (points x scales x
    symmetry levels) may be passed to reuse earlier fits.  Otherwise only
    level ``k+1`` is fitted, smallest scale first, stopping at the first
    symmetric scale; ``min_defect`` is then the minimum over the scales
    visited.  ``cache`` maps ``(point, scale)`` to a defect and is filled in.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    scales = _ladder(r_min, r_max)
    if defects is not None:
        mins = np.min(defects[:, :, k + 1], axis=1)
        return StratumResult(pts, mins > eta, mins, scales, k, eta)
    cache = {} if cache is None else cache
    mins = np.full(len(pts), np.inf)
    for i, x in enumerate(pts):
        for s in scales[::-1]:
            key = (tuple(np.round(x, 12)), float(s))
            dv = cache.get(key)
            if dv is None:
                try:
                    dv = best_symmetric_fit(u, fld, x, float(s), k + 1, d_max).defect
                except (DegenerateWindowError, DomainError):
                    dv = np.inf
                cache[key] = dv
            mins[i] = min(mins[i], dv)
            if dv <= eta:
                break
    return StratumResult(pts, mins > eta, mins, scales, k, eta)


def stratum_defects(u, fld, pts, scales, kmax: int, d_max: int = 6) -> np.ndarray:
    """Array ``(points, scales, kmax+1)`` of monotone symmetry defects; NaN-free (inf on failure)."""
    out = np.full((len(pts), len(scales), kmax + 1), np.inf)
    for i, x in enumerate(pts):
        for j, s in enumerate(scales):
            try:
                out[i, j] = symmetry_defects(u, fld, x, float(s), kmax, d_max)
            except (DegenerateWindowError, DomainError):
                pass
    return out


# ---------------------------------------------------------------------------
# pinched sets and independence

def fit_plane(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Best-fit affine ``k``-plane (mean, orthonormal rows) from second moments."""
    P = np.atleast_2d(points)
    mean = P.mean(axis=0)
    if k == 0 or len(P) < 2:
        return mean, np.zeros((0, P.shape[1]))
    _, _, vt = np.linalg.svd(P - mean, full_matrices=False)
    if vt.shape[0] < k:
        vt = np.linalg.svd(np.vstack([P - mean, np.zeros((k, P.shape[1]))]))[2]
    return mean, vt[:k]


@dataclass
class PinchedSet:
    x: np.ndarray
    r: float
    d: float
    eps: float
    members: np.ndarray
    candidates: np.ndarray
    scales: np.ndarray
    plane_origin: np.ndarray
    plane: np.ndarray
    max_deviation: np.ndarray = dc_field(repr=False, default=None)


def _ball_lattice(x: np.ndarray, r: float, per_axis: int) -> np.ndarray:
    t = np.linspace(-r, r, per_axis)
    G = np.stack(np.meshgrid(*([t] * len(x)), indexing="ij"), axis=-1).reshape(-1, len(x))
    G = G[np.sum(G * G, axis=1) <= r * r * (1 + 1e-12)]
    return x + G


def pinched_set(u, fld, x, r: float, d: float, eps: float, window: tuple | None = None,
                per_axis: int = 9, plane_dim: int | None = None, Lambda: float | None = None,
                mode: str = "centered") -> PinchedSet:
    """Lattice points ``y`` of ``B_r(x)`` with ``|D(y, s) - d| <= eps`` on the whole ladder.

    Parameters
    ----------
    window : (lo, hi), optional
        Ladder range ``[lo r, hi r]`` (dyadic from the top).  Default
        ``[r/100, C_2 Lambda r]`` with ``Lambda = d`` unless given.
    per_axis : int
        Lattice points per axis (odd keeps ``x`` itself in the sample).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = len(x)
    lam = 0.0 if fld is None else fld.lam
    if window is None:
        window = (1.0 / 100.0, c2(lam) * (Lambda if Lambda is not None else max(d, 1.0)))
    scales = _ladder(window[0] * r, window[1] * r)
    cand = _ball_lattice(x, r, per_axis)
    dev = np.full(len(cand), np.inf)
    for i, y in enumerate(cand):
        worst = 0.0
        for s in scales:
            try:
                worst = max(worst, abs(doubling_index(u, fld, y, float(s), mode) - d))
            except (DegenerateWindowError, DomainError):
                worst = np.inf
            if worst > eps:
                break
        dev[i] = worst
    members = cand[dev <= eps]
    k = dim - 2 if plane_dim is None else plane_dim
    origin, plane = fit_plane(members, k) if len(members) else (x, np.zeros((0, dim)))
    return PinchedSet(x, float(r), float(d), float(eps), members, cand, scales, origin, plane, dev)


@dataclass
class IndependenceResult:
    independent: bool
    method: str
    width: float
    threshold: float
    refined_width: float | None = None


def _dist_to_affine(P: np.ndarray, origin: np.ndarray, frame: np.ndarray) -> np.ndarray:
    D = P - origin
    if len(frame):
        D = D - (D @ frame.T) @ frame
    return np.linalg.norm(D, axis=1)


def independence_check(S, k: int, tau: float, r: float, exact_limit: int = 12) -> IndependenceResult:
    """Decide whether ``S`` is ``(k, tau)``-independent at scale ``r``.

    Small sets (``|S| <= exact_limit``) use the candidate affine
    ``(k-1)``-planes through ``k``-subsets of ``S``: ``S`` is independent iff each
    candidate leaves some point at distance ``>= tau r``.  ``refined_width``
    additionally reports a locally optimized min-max width.  Larger sets use
    the RMS distance to the principal ``(k-1)``-plane,
    ``sqrt(sum_{i >= k-1} sigma_i^2 / m)``, which lower-bounds the min-max
    width of every affine plane, so ``>= tau r`` certifies independence.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    thr = tau * r
    if len(S) == 0 or S.shape[1] == 0:
        return IndependenceResult(False, "empty", 0.0, thr)
    if k <= 0:
        return IndependenceResult(True, "trivial", float("inf"), thr)
    if len(S) < k:
        return IndependenceResult(False, "too-few-points", 0.0, thr)
    if len(S) <= exact_limit:
        width = np.inf
        best = None
        for sub in itertools.combinations(range(len(S)), k):
            Q = S[list(sub)]
            origin = Q[0]
            frame = _orthonormal_frame(Q[1:] - origin) if k > 1 else np.zeros((0, S.shape[1]))
            if k > 1 and np.linalg.matrix_rank(Q[1:] - origin, tol=1e-12) < k - 1:
                continue
            w = float(np.max(_dist_to_affine(S, origin, frame)))
            if w < width:
                width, best = w, (origin, frame)
        refined = _refine_width(S, k, best) if best is not None else width
        return IndependenceResult(bool(width >= thr), "k-subsets", float(width), thr, float(refined))
    C = S - S.mean(axis=0)
    sv = np.linalg.svd(C, compute_uv=False)
    tail = float(math.sqrt(np.sum(sv[k - 1:] ** 2) / len(S)))
    return IndependenceResult(bool(tail >= thr), "svd-rms", tail, thr)


def _refine_width(S: np.ndarray, k: int, start) -> float:
    origin, frame = start
    dim = S.shape[1]
    if k == 1:
        f = lambda p: float(np.max(np.linalg.norm(S - p, axis=1)))
        res = minimize(f, origin, method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14})
        return min(f(origin), float(res.fun))
    base = float(np.max(_dist_to_affine(S, origin, frame)))

    def f(z):
        o = z[:dim]
        F = _orthonormal_frame(z[dim:].reshape(k - 1, dim))
        return float(np.max(_dist_to_affine(S, o, F)))

    res = minimize(f, np.concatenate([origin, frame.ravel()]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return min(base, float(res.fun))


# ---------------------------------------------------------------------------
# epsilon regularity

@dataclass
class EpsRegularity:
    not_critical: bool
    witness: float
    D: float
    precondition_ok: bool


def epsilon_regularity(u, fld, x, r: float, eps: float) -> EpsRegularity:
    """``|grad u_{x,r}(0)|`` against ``1 - 2 eps``; the ``D(x,r) <= 1 + eps`` precondition is recorded."""
    w = rescale(u, fld, x, r, "centered")
    g = float(np.linalg.norm(w.gradient(np.zeros((1, w.dim)))[0]))
    D = doubling_index(u, fld, x, r)
    return EpsRegularity(bool(g >= 1 - 2 * eps), g, float(D), bool(D <= 1 + eps))


# ---------------------------------------------------------------------------
# cone splitting

def graph_lipschitz(points: np.ndarray, origin: np.ndarray, frame: np.ndarray, min_sep: float = 0.0) -> float:
    """``max |pi_perp(x - y)| / |pi(x - y)|`` over pairs with ``|pi(x - y)| > min_sep``.

    ``pi`` projects onto the span of ``frame``; returns 0 for fewer than two
    points and ``inf`` if two points share a projection but differ.
    """
    P = np.atleast_2d(points) - origin
    if len(P) < 2:
        return 0.0
    par = P @ frame.T if len(frame) else np.zeros((len(P), 0))
    perp = P - par @ frame if len(frame) else P
    best = 0.0
    for i in range(len(P) - 1):
        dp = np.linalg.norm(par[i + 1:] - par[i], axis=1)
        dq = np.linalg.norm(perp[i + 1:] - perp[i], axis=1)
        keep = dp > max(min_sep, 1e-14)
        if np.any(keep):
            best = max(best, float(np.max(dq[keep] / dp[keep])))
        if np.any(~keep & (dq > 1e-12)) and min_sep == 0.0:
            return float("inf")
    return best


@dataclass
class ConeSplitReport:
    pinched: PinchedSet
    independence: IndependenceResult
    uniform_defect: float
    sqrt_eps: float
    symmetric_ok: bool
    containment: float
    lipschitz: float
    vacuous: bool = False


def cone_split_audit(u, fld, x, r: float, d: float, eps: float, tau: float, k: int | None = None,
                     pinched: PinchedSet | None = None, window: tuple | None = None, per_axis: int = 9,
                     fit_scales: int = 5, max_members: int = 12, d_max: int = 6) -> ConeSplitReport:
    """Pinched set, independence, uniform ``(k, sqrt(eps))``-symmetry and tube containment.

    Uniform symmetry uses one ``k``-symmetric polynomial per member, fitted at
    the middle of the ladder and held fixed across it.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = len(x)
    k = dim - 2 if k is None else k
    V = pinched if pinched is not None else pinched_set(u, fld, x, r, d, eps, window, per_axis, k)
    if len(V.members) == 0:
        ind = IndependenceResult(False, "empty", 0.0, tau * r)
        return ConeSplitReport(V, ind, 0.0, math.sqrt(eps), True, 1.0, 0.0, vacuous=True)
    ind = independence_check(V.members, k, tau, r)
    worst = 0.0
    if ind.independent:
        lo, hi = float(V.scales.min()), float(V.scales.max())
        # spread members deterministically, including the first and last
        idx = np.unique(np.linspace(0, len(V.members) - 1, min(max_members, len(V.members))).round().astype(int))
        for y in V.members[idx]:
            P = best_symmetric_fit(u, fld, y, math.sqrt(lo * hi), k, d_max).P
            for s in np.geomspace(lo, hi, fit_scales):
                worst = max(worst, fixed_polynomial_defect(u, fld, y, float(s), P))
    sym_ok = (not ind.independent) or worst <= math.sqrt(eps)
    if d >= 2:
        dist = _dist_to_affine(V.members, V.plane_origin, V.plane)
        contain = float(np.mean(dist <= tau * r))
    else:
        contain = 1.0
    spacing = 2 * r / max(per_axis - 1, 1)
    lip = graph_lipschitz(V.members, V.plane_origin, V.plane, min_sep=0.5 * spacing)
    return ConeSplitReport(V, ind, worst, math.sqrt(eps), bool(sym_ok), contain, lip)


# ---------------------------------------------------------------------------
# critical set detection

@dataclass
class CriticalCells:
    centers: np.ndarray
    cell_size: float
    lipschitz: float
    levels: int
    mode: str

    def __len__(self) -> int:
        return len(self.centers)


def _cells(lo: np.ndarray, size: float, counts: int) -> np.ndarray:
    t = (np.arange(counts) + 0.5) * size
    return lo + np.stack(np.meshgrid(*([t] * len(lo)), indexing="ij"), axis=-1).reshape(-1, len(lo))


def _grad_lipschitz(u, lo: np.ndarray, hi: np.ndarray, per_axis: int) -> float:
    dim = len(lo)
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(dim)]
    P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    G = np.asarray(u.gradient(P.reshape(-1, dim))).reshape(P.shape)
    step = (hi - lo) / (per_axis - 1)
    best = 0.0
    for k in range(dim):
        dg = np.diff(G, axis=k)
        best = max(best, float(np.max(np.linalg.norm(dg, axis=-1))) / step[k])
    return best


def detect_critical_set(u, fld, region, tol_grad: float = 0.0, levels: int = 6, init_cells: int = 8,
                        mode: str = "critical", safety: float = 1.5, lip_samples: int = 33,
                        local: bool = True, local_from: int = 2) -> CriticalCells:
    """Cells that may contain points with ``grad u = 0`` (and ``u = 0`` in singular mode).

    Parameters
    ----------
    region : (center, half_width)
        Axis-aligned cube to search.
    levels : int
        Number of bisection rounds after the initial ``init_cells^n`` partition.

    Notes
    -----
    A cell is kept when ``|grad u(center)| <= tol_grad + L diam``, with ``L``
    the sampled Lipschitz constant of ``grad u`` (maximum neighbour
    difference quotient on a ``lip_samples^n`` lattice, times ``safety``).
    Under that Lipschitz bound every zero of ``grad u`` lies in a kept cell.
    With ``local`` (from bisection round ``local_from`` on) the bound is
    tightened per cell by the sampled gradient spread over the cell, which
    keeps degenerate critical points (``|grad u| ~ |x|^2``) from being
    surrounded by a blob of cells of radius ``~ sqrt(cell size)``.
    """
    center, hw = region
    center = np.asarray(center, dtype=float).reshape(-1)
    dim = len(center)
    lo, hi = center - hw, center + hw
    L = safety * _grad_lipschitz(u, lo, hi, lip_samples)
    Lu = 0.0
    if mode == "singular":
        axes = [np.linspace(lo[k], hi[k], lip_samples) for k in range(dim)]
        P = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        Lu = safety * float(np.max(np.linalg.norm(u.gradient(P), axis=1)))
    size = 2 * hw / init_cells
    C = _cells(lo, size, init_cells)
    offsets = np.stack(np.meshgrid(*([[-0.25, 0.25]] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    probe = np.stack(np.meshgrid(*([[-0.5, 0.0, 0.5]] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    probe = probe[np.any(probe != 0.0, axis=1)]
    for level in range(levels + 1):
        diam = size * math.sqrt(dim)
        G = u.gradient(C)
        g = np.linalg.norm(G, axis=1)
        bound = np.full(len(C), L * diam / 2)
        if local and level >= local_from and len(C):
            # gradient spread over the cell's 3^n probe lattice; sqrt(n) covers the
            # worst direction of a linear gradient, ``safety`` the curvature
            Gp = u.gradient((C[:, None, :] + size * probe[None, :, :]).reshape(-1, dim)).reshape(len(C), -1, dim)
            spread = np.max(np.linalg.norm(Gp - G[:, None, :], axis=-1), axis=1)
            bound = np.minimum(bound, safety * math.sqrt(dim) * spread)
        keep = g <= tol_grad + bound
        if mode == "singular":
            keep &= np.abs(u(C)) <= Lu * diam / 2
        C = C[keep]
        if level == levels or len(C) == 0:
            break
        C = (C[:, None, :] + size * offsets[None, :, :]).reshape(-1, dim)
        size /= 2
    order = np.lexsort(C.T[::-1]) if len(C) else np.zeros(0, dtype=int)
    return CriticalCells(C[order], size, L, levels, mode)
