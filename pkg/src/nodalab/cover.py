"""Ball coverings of critical sets, neck regions and Minkowski content.

All continuum conditions ("for every point of the ball and every scale") are
checked on finite lattices and dyadic ladders whose densities are recorded in
the returned objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from ._kernels import neighbourhood_lattice_count
from .doubling import doubling_index
from .errors import DegenerateWindowError, DomainError, NotGoodBallError, RecursionCapError
from .field import CoefficientField
from .strata import (CriticalCells, PinchedSet, _ball_lattice, _dist_to_affine, c2, detect_critical_set,
                     epsilon_regularity, fit_plane, graph_lipschitz, independence_check, pinched_set,
                     quantitative_stratum, symmetry_defects)
from .approx import fit_slope

__all__ = [
    "Ball",
    "Covering",
    "vitali",
    "point_cover",
    "lattice_cover",
    "cores_disjoint",
    "radius_function",
    "GoodCheck",
    "good_ball_check",
    "cover_good",
    "critical_cover",
    "minkowski_content",
    "NeckRegion",
    "NeckFailure",
    "build_neck",
    "neck_structure_audit",
    "Decomposition",
    "neck_decomposition",
    "StrataVolumeReport",
    "strata_volume_audit",
]

TAGS = ("a_neck", "b_symmetric", "c_independent", "d_dependent", "e_empty", "good", "terminal_r")
CA_RATIO = 7.0
VITALI_FACTOR = 5.0
CB_DIVISOR = 55.0


@dataclass(frozen=True)
class Ball:
    """Closed ball with a classification tag.

    ``level`` holds ``d`` for ``good``/neck balls and ``t`` the scale factor of
    a good ball; ``family`` names the Vitali stage that produced it.
    """

    center: tuple
    radius: float
    tag: str
    level: float | None = None
    t: float | None = None
    family: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if self.tag not in TAGS:
            raise ValueError(f"unknown ball tag {self.tag!r}")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def contains(self, pts, slack: float = 1e-12) -> np.ndarray:
        P = np.atleast_2d(pts)
        return np.linalg.norm(P - self.c, axis=1) <= self.radius * (1 + slack)

    def with_tag(self, tag: str, **kw) -> "Ball":
        return Ball(self.center, self.radius, tag, kw.get("level", self.level), kw.get("t", self.t),
                    kw.get("family", self.family))


def _ball(center, radius, tag, **kw) -> Ball:
    return Ball(tuple(float(v) for v in np.asarray(center).reshape(-1)), float(radius), tag, **kw)


@dataclass
class Covering:
    balls: list
    m: int
    target: np.ndarray
    pruned: int = 0
    info: dict = dc_field(default_factory=dict)

    @property
    def content(self) -> float:
        # fixed order keeps the floating-point sum reproducible
        r = np.sort(np.array([b.radius for b in self.balls], dtype=float))
        return float(np.sum(r ** self.m)) if len(r) else 0.0

    @property
    def count(self) -> int:
        return len(self.balls)

    @property
    def terminal_count(self) -> int:
        return sum(b.tag == "terminal_r" for b in self.balls)

    def covered(self, pts=None) -> np.ndarray:
        P = self.target if pts is None else np.atleast_2d(pts)
        hit = np.zeros(len(P), dtype=bool)
        for b in self.balls:
            hit |= b.contains(P)
        return hit

    def coverage(self) -> float:
        return float(np.mean(self.covered())) if len(self.target) else 1.0

    def families(self) -> dict:
        """Balls grouped by producing stage, including recorded Vitali-stage balls."""
        out: dict = {}
        for b in list(self.balls) + list(self.info.get("stage_balls", [])):
            out.setdefault(b.family, []).append(b)
        return out

    def disjointness_ok(self) -> bool:
        return all(cores_disjoint(f) for f in self.families().values())

    def rows(self) -> list:
        return [[*b.center, b.radius, b.tag, "" if b.level is None else b.level] for b in self.balls]

    def summary(self) -> dict:
        return {"count": self.count, "terminal_count": self.terminal_count, "content": self.content,
                "m": self.m, "target": len(self.target), "pruned": self.pruned, "coverage": self.coverage(),
                **self.info}


# ---------------------------------------------------------------------------
# elementary covers

def _lex_order(P: np.ndarray) -> np.ndarray:
    return np.lexsort(P.T[::-1]) if len(P) else np.zeros(0, dtype=int)


def vitali(centers: np.ndarray, radii: np.ndarray, core: float = 1.0) -> np.ndarray:
    """Greedy Vitali selection by descending radius (ties: lexicographic centers).

    A ball is selected when its ``core``-scaled copy is disjoint from the
    scaled copies of all previously selected balls.  Returns indices.
    """
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    R = np.asarray(radii, dtype=float).reshape(-1)
    if len(R) == 0:
        return np.zeros(0, dtype=int)
    lex = np.empty(len(R), dtype=int)
    lex[_lex_order(C)] = np.arange(len(R))
    order = np.lexsort((lex, -R))
    chosen: list[int] = []
    for i in order:
        if chosen:
            dist = np.linalg.norm(C[chosen] - C[i], axis=1)
            if np.any(dist <= core * (R[chosen] + R[i])):
                continue
        chosen.append(int(i))
    return np.asarray(chosen, dtype=int)


def point_cover(points: np.ndarray, rho: float) -> np.ndarray:
    """Greedy centers, in lexicographic order, whose ``rho``-balls cover ``points``."""
    P = np.atleast_2d(points)
    if len(P) == 0:
        return np.zeros((0, P.shape[1]))
    P = P[_lex_order(P)]
    left = np.ones(len(P), dtype=bool)
    out = []
    while np.any(left):
        c = P[np.argmax(left)]
        out.append(c)
        left &= np.linalg.norm(P - c, axis=1) > rho
    return np.asarray(out)


def lattice_cover(points: np.ndarray, rho: float, origin=None) -> tuple[np.ndarray, np.ndarray]:
    """Centers on the lattice of spacing ``2 rho / sqrt(n)`` nearest to each point.

    Returns the distinct centers (lexicographic) and the center index of each
    point; every point is within ``rho`` of its center.
    """
    P = np.atleast_2d(points)
    n = P.shape[1]
    a = 2.0 * rho / math.sqrt(n)
    origin = np.zeros(n) if origin is None else np.asarray(origin, dtype=float)
    keys = np.round((P - origin) / a).astype(np.int64)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    return origin + a * uniq, inv.reshape(-1)


def cores_disjoint(balls, factor: float = 0.2) -> bool:
    """Exact check that the closed ``factor``-scaled balls are pairwise disjoint."""
    if len(balls) < 2:
        return True
    C = np.array([b.center for b in balls], dtype=float)
    R = factor * np.array([b.radius for b in balls], dtype=float)
    for i in range(len(balls) - 1):
        d = np.linalg.norm(C[i + 1:] - C[i], axis=1)
        if np.any(d <= R[i + 1:] + R[i]):
            return False
    return True


# ---------------------------------------------------------------------------
# radius function and good balls

def _dyadic(top: float, floor: float) -> np.ndarray:
    m = int(math.floor(math.log2(top / floor) + 1e-9)) if top >= floor else -1
    return top * 2.0 ** -np.arange(m + 1)


def _safe_D(u, fld, y, s, mode) -> float:
    try:
        return doubling_index(u, fld, y, float(s), mode)
    except (DegenerateWindowError, DomainError):
        return float("nan")


def radius_function(u, fld: CoefficientField | None, x, d: float, eps: float, r_cap: float,
                    r_min: float | None = None, mode: str = "centered") -> float:
    """Largest dyadic scale ``s = r_cap 2^-i >= r_min`` with ``D(x, s) <= d - eps``; 0 if none.

    ``r_min`` defaults to ``r_cap / 2^10``.  Scales where ``D`` cannot be
    evaluated are skipped.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    r_min = r_cap / 1024.0 if r_min is None else r_min
    for s in _dyadic(r_cap, r_min):
        D = _safe_D(u, fld, x, s, mode)
        if D == D and D <= d - eps:
            return float(s)
    return 0.0


@dataclass
class GoodCheck:
    ok: bool
    witness: tuple | None
    worst: float
    density: dict

    def __bool__(self) -> bool:
        return self.ok


def good_ball_check(u, fld: CoefficientField | None, ball, d: float, t: float, eps: float,
                    per_axis: int = 5, levels: int = 4, mode: str = "centered") -> GoodCheck:
    """Sampled test of ``D(y, s) <= d + eps`` for ``y`` in the ball and ``s <= t r``.

    ``y`` runs over a ``per_axis`` lattice of the ball (center included for odd
    ``per_axis``); ``s`` over ``t r 2^-i``, ``i = 0..levels``.  The first
    failure, scanning the center first, is returned as ``(y, s, D)``.
    Unevaluable scales count as failures.
    """
    c, r = (ball.c, ball.radius) if isinstance(ball, Ball) else (np.asarray(ball[0], float), float(ball[1]))
    Y = _ball_lattice(c, r, per_axis)
    Y = Y[np.argsort(np.linalg.norm(Y - c, axis=1), kind="stable")]
    scales = t * r * 2.0 ** -np.arange(levels + 1)
    worst = -np.inf
    for y in Y:
        for s in scales:
            D = _safe_D(u, fld, y, s, mode)
            if not D == D or D > d + eps:
                return GoodCheck(False, (y, float(s), D), float("inf") if D != D else D,
                                 {"points": len(Y), "scales": len(scales)})
            worst = max(worst, D)
    return GoodCheck(True, None, float(worst), {"points": len(Y), "scales": len(scales)})


# ---------------------------------------------------------------------------
# covering of a good ball

@dataclass
class _CoverConfig:
    eps: float
    r_floor: float
    tau: float
    t_good: float
    per_axis: int
    check_levels: int
    mode: str
    max_depth: int


def _terminal(points: np.ndarray, r_floor: float, family: str) -> list:
    return [_ball(c, r_floor, "terminal_r", family=family) for c in point_cover(points, r_floor)]


def _finish(u, fld, ball_c, rho, P, d, cfg: _CoverConfig, family, depth, out, branch):
    """Turn one produced ball into good(d-1) balls or terminal balls, subdividing as needed."""
    if depth > cfg.max_depth:
        raise RecursionCapError(f"cover_good exceeded depth {cfg.max_depth}", branch)
    if rho <= cfg.r_floor * (1 + 1e-12):
        # one net per producing ball; sibling nets may overlap each other
        out.extend(_terminal(P, cfg.r_floor, f"{family}/t@{','.join(f'{v:.12g}' for v in ball_c)}"))
        return
    g = good_ball_check(u, fld, (ball_c, rho), d - 1, cfg.t_good, cfg.eps, cfg.per_axis, cfg.check_levels,
                        cfg.mode)
    if g.ok:
        out.append((_ball(ball_c, rho, "good", level=d - 1, t=cfg.t_good, family=family), P))
        return
    child = cfg.tau * rho
    centers, idx = lattice_cover(P, child)
    fam = f"{family}/s{depth}@{','.join(f'{v:.12g}' for v in ball_c)}"
    for j, cc in enumerate(centers):
        _finish(u, fld, cc, child, P[idx == j], d, cfg, fam, depth + 1, out, branch + [tuple(cc)])


def _cover_good(u, fld, ball: Ball, P: np.ndarray, d: int, cfg: _CoverConfig, name: str) -> list:
    n = P.shape[1]
    R = ball.radius
    if len(P) == 0:
        return []
    rp = np.array([radius_function(u, fld, y, d, cfg.eps, R, cfg.r_floor, cfg.mode) for y in P])
    r = np.maximum(rp, cfg.r_floor)
    # C_a: every y within 5 r_x has r_y >= r_x / 7
    in_a = np.ones(len(P), dtype=bool)
    for i in range(len(P)):
        near = np.linalg.norm(P - P[i], axis=1) < VITALI_FACTOR * r[i]
        in_a[i] = bool(np.all(r[near] >= r[i] / CA_RATIO))
    produced = []  # (center, radius, underlying radius, family)
    ia = np.flatnonzero(in_a)
    sel_a = ia[vitali(P[ia], r[ia])] if len(ia) else np.zeros(0, dtype=int)
    for i in sel_a:
        produced.append((P[i], VITALI_FACTOR * r[i], r[i], f"{name}:a"))
    # C_b minus the step-one balls, radii t_y = min |y - x_i| / 55
    ib = np.flatnonzero(~in_a)
    if len(sel_a) and len(ib):
        dist = np.linalg.norm(P[ib][:, None, :] - P[sel_a][None, :, :], axis=-1)
        ib = ib[~np.any(dist <= (VITALI_FACTOR * r[sel_a])[None, :] * (1 + 1e-12), axis=1)]
    if len(ib):
        if len(sel_a):
            t = np.min(np.linalg.norm(P[ib][:, None, :] - P[sel_a][None, :, :], axis=-1), axis=1) / CB_DIVISOR
        else:
            t = r[ib].copy()
        t = np.maximum(t, cfg.r_floor)
        sel_b = vitali(P[ib], t)
        for j in sel_b:
            produced.append((P[ib[j]], VITALI_FACTOR * t[j], t[j], f"{name}:b"))
    # assign each point to the first produced ball containing it
    owner = np.full(len(P), -1)
    for q, (c, rho, _, _) in enumerate(produced):
        free = (owner < 0) & (np.linalg.norm(P - c, axis=1) <= rho * (1 + 1e-12))
        owner[free] = q
    if np.any(owner < 0):  # cannot happen for a Vitali cover; kept as a guard
        raise RuntimeError("Vitali stage left points uncovered")
    out: list = []
    for q, (c, rho, base, fam) in enumerate(produced):
        Q = P[owner == q]
        if base <= cfg.r_floor * (1 + 1e-12):
            out.extend(_terminal(Q, cfg.r_floor, f"{fam}{q}/t"))
            out.append((_ball(c, rho, "terminal_r", family=fam), None))  # Vitali-stage record
        else:
            _finish(u, fld, c, rho, Q, d, cfg, fam, 0, out, [tuple(c)])
    return out


def _split_output(items) -> tuple[list, list, list]:
    terminal, good, stage = [], [], []
    for it in items:
        if isinstance(it, Ball):
            terminal.append(it)
        elif it[1] is None:
            stage.append(it[0])
        else:
            good.append(it)
    return terminal, good, stage


def cover_good(u, fld: CoefficientField | None, ball, points, d: int, eps: float, r_floor: float,
               tau: float = 0.25, t_good: float = 1.0, per_axis: int = 5, check_levels: int = 4,
               mode: str = "centered", check_input: bool = True, max_depth: int = 30) -> Covering:
    """Cover the critical points assigned to a ``d``-good ball.

    Parameters
    ----------
    ball : Ball or (center, radius)
    points : array
        Critical points assigned to the ball.
    tau : float
        Shrink factor used when a produced ball is neither terminal nor
        ``(d-1)``-good and must be subdivided.
    t_good : float
        Scale factor of the goodness checks (input at ``d``, output at ``d-1``).

    Returns
    -------
    Covering
        Balls tagged ``terminal_r`` (radius ``r_floor``) or ``good`` at level
        ``d-1``.  ``info["stage_balls"]`` keeps the Vitali-stage balls with
        ``radius <= 5 r_floor`` that were re-covered terminally.
    """
    if not isinstance(ball, Ball):
        ball = _ball(ball[0], ball[1], "good", level=d, t=t_good)
    P = np.atleast_2d(np.asarray(points, dtype=float))
    dim = len(ball.center)
    P = P.reshape(-1, dim)
    if check_input:
        g = good_ball_check(u, fld, ball, d, t_good, eps, per_axis, check_levels, mode)
        if not g.ok:
            raise NotGoodBallError(f"input ball is not ({d}, {t_good})-good", g.witness)
    cfg = _CoverConfig(eps, r_floor, tau, t_good, per_axis, check_levels, mode, max_depth)
    terminal, good, stage = _split_output(_cover_good(u, fld, ball, P, d, cfg, "g"))
    balls = terminal + [b for b, _ in good]
    return Covering(balls, dim - 2, P, info={"stage_balls": stage, "assigned": [Q for _, Q in good]})


def critical_cover(u, fld: CoefficientField | None, r: float, mode: str = "critical", Lambda: float = 2.0,
                   region=None, eps: float = 0.1, r0: float = 0.25, tau: float = 0.25, t_good: float = 1.0,
                   per_axis: int | None = None, check_levels: int = 3, prune: bool = True,
                   cells: CriticalCells | None = None, max_depth: int = 30) -> Covering:
    """Cover the detected critical (or singular) set of ``u`` in a ball by balls of radius ``>= r``.

    Parameters
    ----------
    r : float
        Terminal radius.
    region : (center, radius)
        Ambient ball, default the unit ball at the origin.
    r0 : float
        Radius of the initial lattice-centered balls.
    cells : CriticalCells, optional
        Precomputed detection; by default the detection resolution is
        chosen at most ``r / 4``.

    Notes
    -----
    The levels ``d = ceil(Lambda), ..., 2`` are processed in turn.  Points in
    the remaining ``1``-good balls that pass the epsilon-regularity test are
    certified non-critical and removed from the target (critical mode only);
    the rest are covered by terminal balls.
    """
    center, R = (np.zeros(2), 1.0) if region is None else region
    center = np.asarray(center, dtype=float).reshape(-1)
    dim = len(center)
    per_axis = per_axis or (5 if dim == 2 else 3)
    dmode = "centered" if mode == "critical" else "uncentered"
    if cells is None:
        init = 8
        levels = max(0, int(math.ceil(math.log2(2 * R / init / (r / 4)) - 1e-9)))
        cells = detect_critical_set(u, fld, (center, R), levels=levels, init_cells=init, mode=mode)
    P = cells.centers
    P = P[np.linalg.norm(P - center, axis=1) <= R + cells.cell_size * math.sqrt(dim)] if len(P) else P
    P = P.reshape(-1, dim)
    info = {"resolution": float(cells.cell_size), "detected": len(P), "Lambda": float(Lambda), "r_floor": r,
            "mode": mode}
    if len(P) == 0:
        return Covering([], dim - 2, P, info=info)
    cfg = _CoverConfig(eps, r, tau, t_good, per_axis, check_levels, dmode, max_depth)
    d_top = max(1, int(math.ceil(Lambda - 1e-12)))
    centers, idx = lattice_cover(P, r0, origin=center)
    queue = []
    initial = []
    for j, c in enumerate(centers):
        b = _ball(c, r0, "good", level=d_top, t=t_good, family="initial")
        g = good_ball_check(u, fld, b, d_top, t_good, eps, per_axis, check_levels, dmode)
        if not g.ok:
            raise NotGoodBallError(f"initial ball at {tuple(np.round(c, 6))} is not ({d_top}, {t_good})-good",
                                   g.witness)
        initial.append(b)
        queue.append((b, P[idx == j]))
    final: list = []
    stages: list = []
    for d in range(d_top, 1, -1):
        nxt = []
        for q, (b, Q) in enumerate(queue):
            items = _cover_good(u, fld, b, Q, d, cfg, f"d{d}.{q}")
            terminal, good, stage = _split_output(items)
            final.extend(terminal)
            stages.extend(stage)
            nxt.extend(good)
        queue = nxt
    target = [P]
    pruned = 0
    for q, (b, Q) in enumerate(queue):
        keep = np.ones(len(Q), dtype=bool)
        if mode == "critical" and prune:
            for i, y in enumerate(Q):
                try:
                    er = epsilon_regularity(u, fld, y, t_good * b.radius, eps)
                except (DegenerateWindowError, DomainError):
                    continue
                keep[i] = not (er.not_critical and er.precondition_ok)
        pruned += int(np.sum(~keep))
        if np.any(~keep):
            target.append(Q[~keep])
        final.extend(_terminal(Q[keep], r, f"d1.{q}/t"))
    removed = np.vstack(target[1:]) if len(target) > 1 else np.zeros((0, dim))
    if len(removed):
        drop = {tuple(v) for v in removed}
        P = np.array([p for p in P if tuple(p) not in drop]).reshape(-1, dim)
    info.update({"initial": initial, "stage_balls": stages, "d_top": d_top})
    return Covering(final, dim - 2, P, pruned=pruned, info=info)


# ---------------------------------------------------------------------------
# Minkowski content

def minkowski_content(S, r: float, ambient=None, pitch: float | None = None, resolution: float | None = None,
                      use_numba: bool | None = None) -> float:
    """Lattice-count volume of ``B_r(S)`` intersected with the ambient ball.

    Parameters
    ----------
    S : array of points, CriticalCells or Covering
        For a covering the neighbourhood is that of the union of its balls.
    ambient : (center, radius), default unit ball at the origin.
    pitch : float, default ``r / 10``; must not exceed ``r / 8``.
    resolution : float, optional
        Sampling resolution of ``S`` (cell size for ``CriticalCells``);
        ``r`` must be at least twice it.
    """
    if pitch is None:
        pitch = r / 10.0
    if pitch > r / 8.0 * (1 + 1e-12):
        raise ValueError("lattice pitch must be at most r/8")
    radii = None
    if isinstance(S, Covering):
        P = np.array([b.center for b in S.balls], dtype=float)
        radii = np.array([b.radius for b in S.balls], dtype=float) + r
    elif isinstance(S, CriticalCells):
        P = S.centers
        resolution = S.cell_size if resolution is None else resolution
    else:
        P = np.asarray(S, dtype=float)
    if resolution is not None and r < 2 * resolution * (1 - 1e-12):
        raise ValueError(f"r = {r} is below twice the sampling resolution {resolution}")
    if P.size == 0:
        return 0.0
    P = np.atleast_2d(P)
    dim = P.shape[1]
    center, R = (np.zeros(dim), 1.0) if ambient is None else ambient
    center = np.asarray(center, dtype=float).reshape(-1)
    count = neighbourhood_lattice_count(P, r if radii is None else radii, center, float(R), float(pitch),
                                        use_numba)
    return count * pitch ** dim


# ---------------------------------------------------------------------------
# neck regions

@dataclass
class NeckRegion:
    """Ball ``B_r(x)`` minus balls ``B_{r_y}(y)`` around a pinched center set."""

    x: np.ndarray
    r: float
    d: float
    k: int
    eps: float
    eta: float
    tau: float
    centers: np.ndarray
    radii: np.ndarray
    plane_origin: np.ndarray
    plane: np.ndarray
    spacing: float
    window: tuple
    invariants: dict = dc_field(default_factory=dict)
    pinched: PinchedSet | None = dc_field(default=None, repr=False)

    @property
    def c0(self) -> np.ndarray:
        return self.centers[self.radii == 0]

    @property
    def c_plus(self) -> np.ndarray:
        return self.centers[self.radii > 0]

    @property
    def ok(self) -> bool:
        return all(v["ok"] for v in self.invariants.values())

    def in_region(self, pts) -> np.ndarray:
        """Points of the closed ambient ball outside every open center ball (``C_0`` included)."""
        P = np.atleast_2d(pts)
        inside = np.linalg.norm(P - self.x, axis=1) <= self.r * (1 + 1e-12)
        for c, rc in zip(self.centers, self.radii):
            if rc > 0:
                inside &= np.linalg.norm(P - c, axis=1) >= rc
        return inside


@dataclass
class NeckFailure:
    stage: str
    reason: str
    where: object = None
    partial: NeckRegion | None = None

    @property
    def ok(self) -> bool:
        return False


def build_neck(u, fld: CoefficientField | None, ball, d: float, k: int, eps: float, eta: float, tau: float,
               window: tuple | None = None, per_axis: int = 9, rx_levels: int = 4, mode: str = "centered"):
    """Neck region on ``ball = (x, r)`` from the lattice pinched set.

    Parameters
    ----------
    window : (lo, hi)
        Pinching ladder ``[lo r, hi r]``; default ``lo = 1/100`` and
        ``hi = C_2(lambda)``.
    rx_levels : int
        ``r_y`` is searched on ``lo r 2^-i``, ``i = 1..rx_levels``, below the
        pinching window; a point with no qualifying scale joins ``C_0``.

    Returns
    -------
    NeckRegion, or NeckFailure naming the failed stage or invariant.
    """
    x, r = (ball.c, ball.radius) if isinstance(ball, Ball) else (np.asarray(ball[0], float).reshape(-1),
                                                                  float(ball[1]))
    dim = len(x)
    lam = 0.0 if fld is None else fld.lam
    window = (1.0 / 100.0, c2(lam)) if window is None else tuple(window)
    V = pinched_set(u, fld, x, r, d, eps, window, per_axis, plane_dim=k, mode=mode)
    if len(V.members) == 0:
        return NeckFailure("pinched", "empty pinched set", tuple(x))
    ind = independence_check(V.members, k, tau, r)
    if not ind.independent:
        return NeckFailure("independence", f"pinched set is not ({k}, {tau})-independent (width {ind.width:.3g})",
                           tuple(x))
    M = V.members[_lex_order(V.members)]
    top = window[0] * r / 2.0
    floor = window[0] * r * 2.0 ** -rx_levels
    rx = np.array([radius_function(u, fld, y, d, eps, top, floor, mode) for y in M])
    # C_+ : Vitali selection with disjoint fifth cores; C_0 points inside a chosen ball are covered by it
    plus = np.flatnonzero(rx > 0)
    chosen = plus[vitali(M[plus], rx[plus], core=0.2)] if len(plus) else np.zeros(0, dtype=int)
    zero = np.flatnonzero(rx == 0)
    if len(chosen):
        dz = np.linalg.norm(M[zero][:, None, :] - M[chosen][None, :, :], axis=-1)
        zero = zero[~np.any(dz <= rx[chosen][None, :] * (1 + 1e-12), axis=1)]
    keep = np.sort(np.concatenate([zero, chosen]))
    C, Rc = M[keep], rx[keep]
    origin, plane = fit_plane(C, k)
    spacing = 2 * r / max(per_axis - 1, 1)
    nr = NeckRegion(x, r, float(d), k, eps, eta, tau, C, Rc, origin, plane, spacing, window, pinched=V)
    nr.invariants = _neck_invariants(u, fld, nr, floor, mode)
    for name, v in nr.invariants.items():
        if not v["ok"]:
            return NeckFailure(name, f"invariant {name} failed", v.get("where"), nr)
    return nr


def _neck_invariants(u, fld, nr: NeckRegion, floor: float, mode: str) -> dict:
    out = {}
    balls = [_ball(c, max(rc, 1e-300), "a_neck") for c, rc in zip(nr.centers, nr.radii)]
    ok = cores_disjoint(balls) if len(balls) > 1 else True
    out["disjoint"] = {"ok": bool(ok), "where": None}
    # pinching on the ladder from r_y (or the floor) up to the top of the window
    worst, where = 0.0, None
    for c, rc in zip(nr.centers, nr.radii):
        for s in _dyadic(nr.window[1] * nr.r, max(rc, floor)):
            D = _safe_D(u, fld, c, s, mode)
            dev = abs(D - nr.d) if D == D else float("inf")
            if dev > worst:
                worst, where = dev, (tuple(c), float(s))
    out["pinching"] = {"ok": bool(worst <= nr.eps), "worst": worst, "where": where}
    # tube condition against the fitted plane through each center
    ratio, where = 0.0, None
    for c, rc in zip(nr.centers, nr.radii):
        for s in _dyadic(2 * nr.r, max(rc, nr.spacing)):
            near = nr.centers[np.linalg.norm(nr.centers - c, axis=1) <= s]
            dist = _dist_to_affine(near, c, nr.plane)
            q = float(np.max(dist)) / s if len(dist) else 0.0
            if q > ratio:
                ratio, where = q, (tuple(c), float(s))
    out["tube"] = {"ok": bool(ratio <= nr.tau), "worst": ratio, "where": where}
    return out


def neck_structure_audit(nr: NeckRegion, slack: float = 0.02) -> dict:
    """Graph Lipschitz constant of the center set over its plane, and the packing sum.

    The packing sum is ``(sum_{C_+} r_y^k + |C_0|_lattice) / r^k`` where the
    lattice measure counts occupied cells of side ``spacing`` in the
    projection onto the plane, times ``spacing^k``.
    """
    C = nr.centers
    lip = graph_lipschitz(C, nr.plane_origin, nr.plane, min_sep=0.5 * nr.spacing) if len(C) > 1 else 0.0
    k = nr.k
    plus = float(np.sum(np.sort(nr.radii[nr.radii > 0]) ** k))
    C0 = nr.c0
    if len(C0) and k > 0:
        proj = (C0 - nr.plane_origin) @ nr.plane.T
        cells = np.unique(np.floor(proj / nr.spacing + 0.5).astype(np.int64), axis=0)
        meas = len(cells) * nr.spacing ** k
    else:
        meas = float(len(C0))
    return {"lipschitz_ok": bool(lip <= 0.1 + slack), "lip_constant": float(lip),
            "packing_sum": (plus + meas) / nr.r ** k, "vacuous": len(C) < 2}


# ---------------------------------------------------------------------------
# neck decomposition

@dataclass
class Decomposition:
    necks: list
    b_balls: list
    e_balls: list
    terminal: list
    k: int
    r_floor: float
    log: list = dc_field(default_factory=list)

    @property
    def content(self) -> float:
        k = self.k
        vals = sorted([nr.r ** k for nr in self.necks] + [b.radius ** k for b in self.b_balls])
        return float(np.sum(vals)) + len(self.terminal) * self.r_floor ** k

    @property
    def s_measure(self) -> float:
        return len(self.terminal) * self.r_floor ** self.k

    def s_set(self) -> np.ndarray:
        pts = [b.c for b in self.terminal]
        return np.array(pts).reshape(-1, len(self.terminal[0].center)) if pts else np.zeros((0, 0))

    def centers(self) -> np.ndarray:
        """Union of all neck center sets."""
        arrs = [nr.centers for nr in self.necks if len(nr.centers)]
        return np.vstack(arrs) if arrs else np.zeros((0, 0))

    def covered(self, pts) -> np.ndarray:
        P = np.atleast_2d(pts)
        hit = np.zeros(len(P), dtype=bool)
        for b in self.b_balls + self.e_balls + self.terminal:
            hit |= b.contains(P)
        for nr in self.necks:
            hit |= nr.in_region(P)
        return hit

    def summary(self) -> dict:
        return {"necks": len(self.necks), "b_balls": len(self.b_balls), "e_balls": len(self.e_balls),
                "terminal": len(self.terminal), "content": self.content, "s_measure": self.s_measure}


def neck_decomposition(u, fld: CoefficientField | None, ball, k: int, eps: float, eta: float, tau: float,
                       r_floor: float, d: int = 2, subdivide: float | None = None, window: tuple | None = None,
                       per_axis: int = 9, d_max: int = 4, max_depth: int = 12, max_balls: int = 20000,
                       mode: str = "centered") -> Decomposition:
    """Classify balls into neck, symmetric, dependent and empty pieces, recursing to ``r_floor``.

    Parameters
    ----------
    d : int
        Doubling level of the top ball.
    subdivide : float
        Child radius factor for dependent balls, default ``tau / 10``.

    Notes
    -----
    Per ball: symmetric at scale ``2 rho`` with defect ``<= 2 eta`` gives a
    ``b`` ball; an empty pinched set drops the level (an ``e`` ball at level
    1); an independent pinched set builds a neck whose center balls are
    reprocessed; otherwise the ball is covered by lattice balls of radius
    ``subdivide * rho``.
    """
    x, r = (ball.c, ball.radius) if isinstance(ball, Ball) else (np.asarray(ball[0], float).reshape(-1),
                                                                  float(ball[1]))
    subdivide = tau / 10.0 if subdivide is None else subdivide
    out = Decomposition([], [], [], [], k, r_floor)
    stack = [(x, r, d, 0, [(tuple(x), r, d)])]
    processed = 0
    while stack:
        c, rho, lev, depth, branch = stack.pop()
        processed += 1
        if depth > max_depth or processed > max_balls:
            raise RecursionCapError("neck decomposition exceeded its cap", branch)
        if rho <= r_floor * (1 + 1e-12):
            out.terminal.append(_ball(c, rho, "terminal_r", level=lev))
            continue
        try:
            sym = float(symmetry_defects(u, fld, c, 2 * rho, k + 1, d_max, mode)[k + 1])
        except (DegenerateWindowError, DomainError):
            sym = float("inf")
        if sym <= 2 * eta:
            out.b_balls.append(_ball(c, rho, "b_symmetric", level=lev))
            out.log.append((tuple(c), rho, lev, "b"))
            continue
        nr = build_neck(u, fld, (c, rho), lev, k, eps, eta, tau, window, per_axis, mode=mode)
        if isinstance(nr, NeckFailure) and nr.stage == "pinched":
            out.log.append((tuple(c), rho, lev, "e"))
            if lev > 1:
                stack.append((c, rho, lev - 1, depth + 1, branch + [(tuple(c), rho, lev - 1)]))
            else:
                out.e_balls.append(_ball(c, rho, "e_empty", level=lev))
            continue
        if isinstance(nr, NeckRegion):
            out.log.append((tuple(c), rho, lev, "c"))
            out.necks.append(nr)
            for cc, rc in zip(nr.c_plus, nr.radii[nr.radii > 0]):
                stack.append((cc, rc, lev, depth + 1, branch + [(tuple(cc), rc, lev)]))
            continue
        out.log.append((tuple(c), rho, lev, "d"))
        child = subdivide * rho
        a = 2.0 * child / math.sqrt(len(c))
        centers = _cube_lattice(c, a * math.ceil((rho + child) / a), a)
        centers = centers[np.linalg.norm(centers - c, axis=1) <= rho + child]
        for cc in centers[::-1]:
            stack.append((cc, child, lev, depth + 1, branch + [(tuple(cc), child, lev)]))
    return out


# ---------------------------------------------------------------------------
# strata volume

@dataclass
class StrataVolumeReport:
    r: np.ndarray
    content: np.ndarray
    counts: np.ndarray
    slope: float
    empty: bool
    spacing: np.ndarray


def _cube_lattice(center: np.ndarray, hw: float, h: float) -> np.ndarray:
    m = int(math.floor(hw / h + 1e-9))
    t = h * np.arange(-m, m + 1)
    return center + np.stack(np.meshgrid(*([t] * len(center)), indexing="ij"), axis=-1).reshape(-1, len(center))


def strata_volume_audit(u, fld: CoefficientField | None, k: int, eta: float, r_ladder, region=None,
                        r_max: float = 0.25, d_max: int = 4) -> StrataVolumeReport:
    """Minkowski content of ``S^k_{eta, r}`` against ``r`` and its log-log slope.

    For each ``r`` (processed from the largest) the stratum is evaluated on a
    lattice of spacing ``r/2``; below the largest ``r`` only lattice points
    within half a coarse spacing (sup norm) of the previous members are
    sampled, using that the strata shrink as ``r`` decreases.
    """
    rs = np.sort(np.asarray(r_ladder, dtype=float))[::-1]
    center, R = (None, 1.0) if region is None else region
    dim = u.dim
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(-1)
    cache: dict = {}
    contents, counts, spacings = [], [], []
    members = None
    prev_h = None
    for r in rs:
        h = r / 2.0
        if members is None:
            pts = _cube_lattice(center, R, h)
        else:
            if len(members) == 0:
                pts = np.zeros((0, dim))
            else:
                span = int(math.ceil(prev_h / (2 * h) - 1e-9))
                off = h * np.stack(np.meshgrid(*([np.arange(-span, span + 1)] * dim), indexing="ij"),
                                   axis=-1).reshape(-1, dim)
                base = center + h * np.round((members - center) / h)
                pts = np.unique(np.round((base[:, None, :] + off[None, :, :]).reshape(-1, dim), 12), axis=0)
        pts = pts[np.linalg.norm(pts - center, axis=1) <= R * (1 + 1e-12)] if len(pts) else pts
        res = quantitative_stratum(u, fld, pts, k, eta, r, r_max, d_max, cache=cache) if len(pts) else None
        members = res.members if res is not None else np.zeros((0, dim))
        contents.append(minkowski_content(members, r, (center, R), resolution=h))
        counts.append(len(members))
        spacings.append(h)
        prev_h = h
    contents = np.asarray(contents)
    empty = bool(np.all(np.asarray(counts) == 0))
    slope = float("nan") if empty else fit_slope(rs, contents)
    return StrataVolumeReport(rs, contents, np.asarray(counts), slope, empty, np.asarray(spacings))
