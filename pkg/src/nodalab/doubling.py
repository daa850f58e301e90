"""Rescaled windows, doubling index, frequency and their monotonicity diagnostics.

A solution is any object with ``dim``, ``__call__(pts)``, ``gradient(pts)``,
``contains(pts, margin)`` and ``bounded``; grid solutions, analytic
solutions and rescaled windows all qualify, so windows can be nested.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Any, Sequence

import numpy as np
from scipy import integrate

from .errors import DegenerateWindowError, DomainError
from .field import CoefficientField, matrix_sqrt
from .quadrature import ball_rule, sphere_rule

DEGENERACY = 1e-30

__all__ = [
    "DEGENERACY",
    "RescaledWindow",
    "rescale",
    "transform_at",
    "sphere_average",
    "ball_average",
    "doubling_index",
    "ball_doubling_index",
    "frequency",
    "H",
    "h_identity_audit",
    "DoublingProfile",
    "profile",
    "MonotonicityReport",
    "almost_monotonicity_audit",
    "non_pinching_scales",
]


def transform_at(fld: CoefficientField | None, x, dim: int) -> np.ndarray:
    """``A_x``, the square root of ``a(x)``; the identity when ``fld`` is None."""
    if fld is None or fld.is_identity:
        return np.eye(dim)
    return matrix_sqrt(fld.a(np.asarray(x, dtype=float).reshape(1, dim))[0])


def _lam(fld) -> float:
    return 0.0 if fld is None else float(fld.lam)


def _check_domain(u, x, T: np.ndarray, radius: float) -> None:
    # the ellipsoid x + T(B_radius): axis-extreme points plus the sphere nodes
    dim = len(x)
    cols = []
    for k in range(dim):
        row = T[k]
        nrm = np.linalg.norm(row)
        if nrm > 0:
            cols.append(T @ (row / nrm))
    ext = np.array(cols) * radius
    nodes = sphere_rule(dim)[0] * radius
    pts = np.vstack([x + ext, x - ext, x + nodes @ T.T])
    if not np.all(u.contains(pts)):
        raise DomainError("window exceeds the solution domain")


def _check_scale(u, fld, r: float) -> None:
    if not r > 0:
        raise ValueError("scale must be positive")
    # the scale cap only matters for solutions on a bounded domain
    if getattr(u, "bounded", False) and r > (1.0 + _lam(fld)) ** -0.5 * (1 + 1e-12):
        raise DomainError("scale exceeds (1+lambda)^(-1/2)")


def _raw_sphere_mean_sq(u, x, T, u0, rho) -> float:
    nodes, w = sphere_rule(len(x))
    v = np.asarray(u(x + rho * nodes @ T.T)) - u0
    return float(w @ (v * v))


def _raw_ball_mean_sq(u, x, T, u0, rho) -> float:
    nodes, w = ball_rule(len(x))
    v = np.asarray(u(x + rho * nodes @ T.T)) - u0
    return float(w @ (v * v))


@dataclass(frozen=True, eq=False)
class RescaledWindow:
    """The window ``y -> (u(x + r A_x y) - u(x)) / norm`` (``u(x)`` omitted when uncentered).

    ``norm`` makes the sphere average of the squared window equal to one.
    """

    base: Any = dc_field(repr=False)
    x: np.ndarray
    r: float
    A: np.ndarray
    mode: str
    offset: float
    norm: float

    @property
    def dim(self) -> int:
        return len(self.x)

    @property
    def bounded(self) -> bool:
        return bool(getattr(self.base, "bounded", False))

    @property
    def T(self) -> np.ndarray:
        return self.r * self.A

    def to_base(self, pts) -> np.ndarray:
        return self.x + np.asarray(pts, dtype=float) @ self.T.T

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.dim)
        out = (np.asarray(self.base(self.to_base(flat))) - self.offset) / self.norm
        return out.reshape(pts.shape[:-1])

    def gradient(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.dim)
        g = np.asarray(self.base.gradient(self.to_base(flat))) @ self.T / self.norm
        return g.reshape(pts.shape)

    def contains(self, pts, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        # margins are in window units; map them through the largest stretch
        stretch = float(np.linalg.norm(self.T, 2))
        return self.base.contains(self.to_base(pts.reshape(-1, self.dim)), margin * stretch).reshape(pts.shape[:-1])


def rescale(u, fld: CoefficientField | None, x, r: float, mode: str = "centered") -> RescaledWindow:
    """Build the normalized window of ``u`` at ``(x, r)``.

    Parameters
    ----------
    u : solution
    fld : CoefficientField or None
        Supplies ``A_x``; None means the identity.
    x : array_like
    r : float
    mode : {"centered", "uncentered"}

    Raises
    ------
    DomainError
        If ``x + r A_x(B_2)`` leaves the domain or ``r`` exceeds the scale cap.
    DegenerateWindowError
        If the window is numerically constant.
    """
    if mode not in ("centered", "uncentered"):
        raise ValueError("mode must be 'centered' or 'uncentered'")
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_scale(u, fld, r)
    A = transform_at(fld, x, len(x))
    T = r * A
    _check_domain(u, x, T, 2.0)
    u0 = float(np.asarray(u(x[None, :]))[0]) if mode == "centered" else 0.0
    h1 = _raw_sphere_mean_sq(u, x, T, u0, 1.0)
    if not h1 > DEGENERACY:
        raise DegenerateWindowError(f"window is numerically constant (sphere mean square {h1:.3e})")
    return RescaledWindow(u, x, float(r), A, mode, u0, math.sqrt(h1))


def sphere_average(w, rho: float = 1.0) -> float:
    """Sphere average of ``w`` over ``|y| = rho`` using the fixed rule of this package."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    nodes, wts = sphere_rule(int(w.dim))
    pts = rho * nodes
    if hasattr(w, "contains") and not np.all(w.contains(pts)):
        raise DomainError("quadrature nodes outside the evaluator's domain")
    return float(wts @ np.asarray(w(pts)))


def ball_average(w, rho: float = 1.0) -> float:
    nodes, wts = ball_rule(int(w.dim))
    pts = rho * nodes
    if hasattr(w, "contains") and not np.all(w.contains(pts)):
        raise DomainError("quadrature nodes outside the evaluator's domain")
    return float(wts @ np.asarray(w(pts)))


def _prepare(u, fld, x, r, mode):
    if mode not in ("centered", "uncentered"):
        raise ValueError("mode must be 'centered' or 'uncentered'")
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_scale(u, fld, r)
    T = r * transform_at(fld, x, len(x))
    _check_domain(u, x, T, 2.0)
    u0 = float(np.asarray(u(x[None, :]))[0]) if mode == "centered" else 0.0
    return x, T, u0


def doubling_index(u, fld: CoefficientField | None, x, r: float, mode: str = "centered") -> float:
    """``log_4`` of the ratio of the window's sphere mean squares at radii 2 and 1."""
    x, T, u0 = _prepare(u, fld, x, r, mode)
    h1 = _raw_sphere_mean_sq(u, x, T, u0, 1.0)
    if not h1 > DEGENERACY:
        raise DegenerateWindowError(f"window is numerically constant (sphere mean square {h1:.3e})")
    h2 = _raw_sphere_mean_sq(u, x, T, u0, 2.0)
    return math.log(h2 / h1) / math.log(4.0)


def ball_doubling_index(u, fld: CoefficientField | None, x, r: float, mode: str = "centered") -> float:
    """Ball version: ``log_4`` of the ratio of ball mean squares at radii 2 and 1."""
    x, T, u0 = _prepare(u, fld, x, r, mode)
    b1 = _raw_ball_mean_sq(u, x, T, u0, 1.0)
    if not b1 > DEGENERACY:
        raise DegenerateWindowError(f"window is numerically constant (ball mean square {b1:.3e})")
    b2 = _raw_ball_mean_sq(u, x, T, u0, 2.0)
    return math.log(b2 / b1) / math.log(4.0)


def H(u, x, r: float) -> float:
    """Sphere average of ``(u - u(x))^2`` over ``|y - x| = r`` (Euclidean spheres)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u0 = float(np.asarray(u(x[None, :]))[0])
    nodes, w = sphere_rule(len(x))
    pts = x + r * nodes
    if not np.all(u.contains(pts)):
        raise DomainError("sphere leaves the solution domain")
    v = np.asarray(u(pts)) - u0
    return float(w @ (v * v))


def frequency(u, x, r: float) -> float:
    """Normalized frequency ``(r^2/n) * mean_{B_r}|grad u|^2 / mean_{dB_r}(u - u(x))^2``.

    Intended for harmonic ``u`` (Euclidean balls, no coefficient transform).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = len(x)
    h = H(u, x, r)
    if not h > DEGENERACY:
        raise DegenerateWindowError(f"sphere mean square {h:.3e} is degenerate")
    nodes, w = ball_rule(n)
    pts = x + r * nodes
    if not np.all(u.contains(pts, margin=0.0)):
        raise DomainError("ball leaves the solution domain")
    g = np.asarray(u.gradient(pts))
    energy = float(w @ np.sum(g * g, axis=-1))
    return r * r / n * energy / h


def h_identity_audit(u, x, r1: float, r2: float) -> float:
    """``|log H(r2) - log H(r1) - 2 int_{r1}^{r2} N(s)/s ds|`` with adaptive quadrature."""
    if r2 < r1:
        raise ValueError("r1 must not exceed r2")
    if r1 == r2:
        return 0.0
    lhs = math.log(H(u, x, r2)) - math.log(H(u, x, r1))
    # integrate in log s, where N is smooth and slowly varying
    val, _ = integrate.quad(lambda t: frequency(u, x, math.exp(t)), math.log(r1), math.log(r2),
                            epsabs=1e-12, epsrel=1e-11, limit=200)
    return abs(lhs - 2.0 * val)


# ---------------------------------------------------------------------------
# profiles

@dataclass
class DoublingProfile:
    """Doubling data at one base point across the ladder ``r_i = r_max 2^-i``."""

    x: np.ndarray
    mode: str
    scales: np.ndarray
    D: np.ndarray
    N: np.ndarray
    H: np.ndarray
    flags: list = dc_field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return np.array([f == "" for f in self.flags], dtype=bool)

    def rows(self) -> list[list]:
        out = []
        xs = " ".join(f"{v:.17g}" for v in self.x)
        for r, d, nn, hh, fl in zip(self.scales, self.D, self.N, self.H, self.flags):
            out.append([xs, self.mode, r, d, "" if np.isnan(nn) else nn, hh, fl])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "mode", "r", "D", "N", "H", "flags"])
        for row in self.rows():
            wr.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def profile(u, fld: CoefficientField | None, x, r_max: float, m: int, mode: str = "centered",
            with_frequency: bool | None = None) -> DoublingProfile:
    """Evaluate ``D`` and ``H`` (and ``N`` when ``a = I``) on ``r_max 2^-i``, ``i = 0..m``.

    Scales failing a precondition are kept with NaN values and a flag.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    scales = r_max * 2.0 ** -np.arange(m + 1)
    if with_frequency is None:
        with_frequency = fld is None or fld.is_identity
    D = np.full(m + 1, np.nan)
    N = np.full(m + 1, np.nan)
    Hs = np.full(m + 1, np.nan)
    flags = []
    for i, r in enumerate(scales):
        try:
            D[i] = doubling_index(u, fld, x, float(r), mode)
            x_, T, u0 = _prepare(u, fld, x, float(r), mode)
            Hs[i] = _raw_sphere_mean_sq(u, x_, T, u0, 1.0)
            if with_frequency and mode == "centered":
                N[i] = frequency(u, x, float(r))
            flags.append("")
        except DegenerateWindowError:
            flags.append("degenerate")
        except DomainError:
            flags.append("domain")
    return DoublingProfile(x, mode, scales, D, N, Hs, flags)


@dataclass
class MonotonicityReport:
    violations: list
    min_small_scale_D: float
    pairs_checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def almost_monotonicity_audit(p: DoublingProfile, eps: float, small_fraction: float = 0.5) -> MonotonicityReport:
    """List ladder pairs with ``2s <= r`` and ``D(s) > D(r) + eps``.

    ``min_small_scale_D`` is the minimum of ``D`` over the smallest
    ``small_fraction`` of valid ladder scales.
    """
    ok = p.valid
    idx = np.nonzero(ok)[0]
    viol = []
    pairs = 0
    for a in idx:          # r = scales[a]
        for b in idx:      # s = scales[b]
            if 2 * p.scales[b] <= p.scales[a] * (1 + 1e-12):
                pairs += 1
                excess = p.D[b] - p.D[a] - eps
                if excess > 0:
                    viol.append((float(p.scales[b]), float(p.scales[a]), float(excess)))
    if len(idx):
        small = idx[int(math.floor(len(idx) * (1 - small_fraction))):]
        mn = float(np.min(p.D[small])) if len(small) else float("nan")
    else:
        mn = float("nan")
    return MonotonicityReport(viol, mn, pairs)


def non_pinching_scales(p: DoublingProfile, eps: float) -> tuple[list, int]:
    """Indices ``j`` of the base-4 sub-ladder with ``|D(4^-j r_max) - D(4^-(j+1) r_max)| >= eps``."""
    out = []
    for j in range(0, (len(p.scales) - 1) // 2):
        a, b = 2 * j, 2 * j + 2
        if p.flags[a] or p.flags[b]:
            continue
        if abs(p.D[a] - p.D[b]) >= eps:
            out.append(j)
    return out, len(out)
