"""Harmonic replacement of a rescaled window and the resulting error audits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .doubling import RescaledWindow, doubling_index, rescale
from .errors import DegenerateWindowError, DomainError
from .field import CoefficientField
from .pde import Grid, GridSolution, solve_laplace_inherit
from .quadrature import ball_rule, sphere_rule

__all__ = [
    "ApproximationReport",
    "harmonic_approximation",
    "closeness_audit",
    "PinchedReport",
    "pinched_approximation",
    "GrowthReport",
    "gradient_growth_audit",
    "fit_slope",
    "b3_sample",
]

WINDOW_HALF_WIDTH = 4.0


def fit_slope(t, v) -> float:
    """Least-squares slope of ``log v`` against ``log t``."""
    t, v = np.asarray(t, dtype=float), np.asarray(v, dtype=float)
    keep = (t > 0) & (v > 0) & np.isfinite(v)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(t[keep]), np.log(v[keep]), 1)[0])


def b3_sample(dim: int, radius: float = 3.0, per_axis: int | None = None) -> np.ndarray:
    """Lattice points of the closed ball plus sphere quadrature nodes at the rim."""
    per_axis = per_axis or (61 if dim == 2 else 25)
    t = np.linspace(-radius, radius, per_axis)
    P = np.stack(np.meshgrid(*([t] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    P = P[np.sum(P * P, axis=1) <= radius * radius * (1 + 1e-12)]
    return np.vstack([P, radius * sphere_rule(dim)[0]])


@dataclass
class ApproximationReport:
    x: np.ndarray
    r: float
    sup_distance: float
    h_at_zero: float
    h_sphere_mean_sq: float
    closeness: list = dc_field(default_factory=list)
    n_cells: int = 0
    n_samples: int = 0


def _normalized(h: GridSolution) -> GridSolution:
    # shift so h(0) = 0, then scale to unit sphere mean square
    dim = h.dim
    h0 = float(h(np.zeros((1, dim)))[0])
    vals = h.values - h0
    nodes, w = sphere_rule(dim)
    tmp = GridSolution(h.grid, vals)
    s = float(w @ tmp(nodes) ** 2)
    if not s > 0:
        raise DegenerateWindowError("harmonic replacement vanishes on the unit sphere")
    return GridSolution(h.grid, vals / math.sqrt(s), info=dict(h.info, shift=h0, scale=math.sqrt(s)))


def harmonic_approximation(u, fld: CoefficientField | None, x, r: float, n_cells: int | None = None,
                           window: RescaledWindow | None = None) -> tuple[GridSolution, ApproximationReport]:
    """Discrete harmonic function with the boundary data of the window on ``[-4, 4]^n``.

    The replacement is normalized so that ``h(0) = 0`` and its unit-sphere
    mean square is one; the report records ``sup |h - window|`` over a dense
    sample of ``B_3``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = len(x)
    w = window if window is not None else rescale(u, fld, x, r, "centered")
    n_cells = n_cells or (128 if dim == 2 else 48)
    L = WINDOW_HALF_WIDTH
    corners = np.array(np.meshgrid(*[[-L, L]] * dim, indexing="ij")).reshape(dim, -1).T
    if not np.all(w.contains(corners)):
        raise DomainError("the [-4,4]^n window box leaves the solution domain")
    template = Grid(dim, tuple(np.zeros(dim)), L, n_cells)
    h = _normalized(solve_laplace_inherit(template, w, (np.zeros(dim), L)))
    S = b3_sample(dim)
    sup = float(np.max(np.abs(h(S) - w(S))))
    nodes, wts = sphere_rule(dim)
    rep = ApproximationReport(x, float(r), sup, float(h(np.zeros((1, dim)))[0]), float(wts @ h(nodes) ** 2),
                              n_cells=n_cells, n_samples=len(S))
    return h, rep


def _window_D(w, s: float) -> float:
    # doubling index at the origin of a window (A = I there)
    return doubling_index(w, None, np.zeros(w.dim), s, "centered")


def closeness_audit(u, fld: CoefficientField | None, x, r: float, eps: float, h: GridSolution | None = None,
                    n_cells: int | None = None) -> list[dict]:
    """``|D^h(0,s) - D^{window}(0,s)|`` for dyadic ``s`` from 1 down to ``eps^2``."""
    w = rescale(u, fld, x, r, "centered")
    if h is None:
        h, _ = harmonic_approximation(u, fld, x, r, n_cells=n_cells, window=w)
    rows = []
    s = 1.0
    while s >= eps * eps * (1 - 1e-12):
        dh, dw = _window_D(h, s), _window_D(w, s)
        diff = abs(dh - dw)
        rows.append({"s": s, "D_h": dh, "D_u": dw, "diff": diff, "flag": diff > eps})
        s /= 2.0
    return rows


@dataclass
class PinchedReport:
    r1: float
    r2: float
    eps: float
    hypothesis_ok: bool
    pinch_spread: float
    shells: list
    inner: list
    closeness: list

    @property
    def max_relative(self) -> float:
        return max((row["relative_error"] for row in self.shells), default=0.0)

    @property
    def max_closeness(self) -> float:
        return max((row["diff"] for row in self.closeness), default=0.0)


def pinched_approximation(u, fld: CoefficientField | None, x, r1: float, r2: float, eps: float,
                          n_cells: int | None = None, pinch_ladder: int = 6):
    """Harmonic replacement at scale ``r1`` audited in the two error regimes.

    On shells ``|y| = rho`` with ``rho`` in ``[r2/r1, 1/2]`` the error is relative
    to the window's root sphere mean square at ``rho``; inside ``|y| <= r2/r1`` it
    is absolute.  The pinching hypothesis (spread of ``D`` over ``[r2, r1]`` at
    most ``eps``) is measured and recorded, never enforced.
    """
    if not 10 * r2 <= r1 * (1 + 1e-12):
        raise ValueError("need 10 r2 <= r1")
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = len(x)
    ladder = np.geomspace(r1, r2, pinch_ladder)
    Ds = [doubling_index(u, fld, x, float(s), "centered") for s in ladder]
    spread = float(max(Ds) - min(Ds))
    w = rescale(u, fld, x, r1, "centered")
    h, _ = harmonic_approximation(u, fld, x, r1, n_cells=n_cells, window=w)
    nodes, wts = sphere_rule(dim)
    rho0 = r2 / r1
    shells = []
    rho = 0.5
    while rho >= rho0 * (1 - 1e-12):
        pts = rho * nodes
        wu = w(pts)
        Hrho = float(wts @ wu ** 2)
        err = float(np.max(np.abs(h(pts) - wu)))
        shells.append({"rho": rho, "abs_error": err, "H": Hrho, "relative_error": err / math.sqrt(Hrho)})
        rho /= 2.0
    bn, _ = ball_rule(dim)
    inner_pts = rho0 * bn
    inner = [{"rho": rho0, "abs_error": float(np.max(np.abs(h(inner_pts) - w(inner_pts))))}]
    close = []
    s = 0.5
    while s >= rho0 * (1 - 1e-12):
        dh, dw = _window_D(h, s), _window_D(w, s)
        close.append({"s": s, "D_h": dh, "D_u": dw, "diff": abs(dh - dw), "flag": abs(dh - dw) > 10 * eps})
        s /= 2.0
    rep = PinchedReport(r1, r2, eps, spread <= eps, spread, shells, inner, close)
    return h, rep


@dataclass
class GrowthReport:
    t: np.ndarray
    mean_sq: np.ndarray
    sup_abs: np.ndarray
    sup_grad: np.ndarray
    split: float
    slopes_outer: tuple
    slopes_inner: tuple
    hypothesis_min_D: float
    gamma: float


def gradient_growth_audit(u, fld: CoefficientField | None, x, r1: float, r2: float, gamma: float,
                          levels: int = 8) -> GrowthReport:
    """Growth of ``mean_{B_t} w^2``, ``sup_{B_t}|w|`` and ``sup_{B_t}|grad w|`` for the window at ``r1``.

    ``t`` runs over ``2^-j``; slopes are fitted separately above and below
    ``t = r2/r1`` (each regime needs at least two ladder points).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    dim = len(x)
    w = rescale(u, fld, x, r1, "centered")
    split = r2 / r1
    tmin = min(split / 4.0, 2.0 ** -levels)
    t = 2.0 ** -np.arange(0, int(round(-math.log2(tmin))) + 1)
    bn, bw = ball_rule(dim)
    sn, _ = sphere_rule(dim)
    pts_unit = np.vstack([bn, sn])
    ms, sa, sg = [], [], []
    for ti in t:
        P = ti * pts_unit
        vals = w(P)
        ms.append(float(bw @ vals[:len(bn)] ** 2))
        sa.append(float(np.max(np.abs(vals))))
        sg.append(float(np.max(np.linalg.norm(w.gradient(P), axis=1))))
    ms, sa, sg = map(np.asarray, (ms, sa, sg))
    outer = t >= split * (1 - 1e-12)
    inner = t <= split * (1 + 1e-12)
    so = tuple(fit_slope(t[outer], v[outer]) for v in (ms, sa, sg))
    si = tuple(fit_slope(t[inner], v[inner]) for v in (ms, sa, sg))
    ladder = np.geomspace(r1, r2, 5)
    dmin = float(min(doubling_index(u, fld, x, float(s), "centered") for s in ladder))
    return GrowthReport(t, ms, sa, sg, split, so, si, dmin, gamma)
