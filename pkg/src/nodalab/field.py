"""Coefficient fields ``(a, b, c)`` and exact analytic reference solutions.

A field describes the operator ``div(a grad u) + b . grad u + c u``.  The
generators guarantee

* ``(1+lam)^-1 I <= a(x) <= (1+lam) I``,
* ``|a_ij(y) - a_ij(z)| <= lam |y - z|^alpha`` and ``|b|, |c| <= lam``,

and both properties are re-checked by sampled audits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .hhp import HarmonicPolynomial, HomogeneousPoly, as_poly

MODES = ("identity", "radial_bump", "random_smoothed")
FIELD_FORMAT = "nodalab-field"
FIELD_VERSION = 1

__all__ = [
    "CoefficientField",
    "make_hoelder_field",
    "matrix_sqrt",
    "matrix_sqrt_batch",
    "ellipticity_audit",
    "hoelder_audit",
    "AnalyticSolution",
    "harmonic_polynomial_solution",
    "polynomial_solution",
    "default_bump_matrix",
]


def default_bump_matrix(dim: int) -> np.ndarray:
    # positive semidefinite so that I + lam*rho*M never drops below (1+lam)^-1;
    # equal first two entries keep the x<->y symmetry of saddle test problems
    return np.diag([1.0, 0.5]) if dim == 2 else np.diag([1.0, 1.0, 0.5])


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Immutable coefficient data with vectorized evaluators.

    Use :func:`make_hoelder_field` to construct instances.
    """

    dim: int
    lam: float
    alpha: float
    mode: str
    seed: int
    params: dict = dc_field(default_factory=dict)
    _modes: dict = dc_field(default_factory=dict, repr=False)

    @property
    def is_identity(self) -> bool:
        return self.mode == "identity" or self.lam == 0.0

    @property
    def has_drift(self) -> bool:
        return self.mode == "random_smoothed" and self.lam > 0 and bool(self.params.get("drift", True))

    @property
    def has_potential(self) -> bool:
        return self.mode == "random_smoothed" and self.lam > 0 and bool(self.params.get("potential", False))

    @property
    def diagonal(self) -> bool:
        """True when ``a`` has no off-diagonal entries anywhere."""
        if self.is_identity:
            return True
        if self.mode == "radial_bump":
            M = self._modes["M"]
            return bool(np.all(M == np.diag(np.diag(M))))
        return False

    # -- evaluators -------------------------------------------------------
    def a(self, pts) -> np.ndarray:
        """Leading coefficient matrices, shape ``pts.shape[:-1] + (dim, dim)``."""
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        eye = np.broadcast_to(np.eye(self.dim), shape + (self.dim, self.dim))
        if self.is_identity:
            return eye.copy()
        if self.mode == "radial_bump":
            x0, M = self._modes["x0"], self._modes["M"]
            rho = np.minimum(np.linalg.norm(pts - x0, axis=-1) ** self.alpha, 1.0)
            return eye + self.lam * rho[..., None, None] * M
        G = np.zeros(shape + (self.dim, self.dim))
        for (i, j), (K, A, P) in self._modes["entries"].items():
            g = np.cos(pts @ K.T + P) @ A
            G[..., i, j] = g
            G[..., j, i] = g
        a = eye + np.clip(G, -self._modes["clip"], self._modes["clip"])
        return _eigen_floor(a, 1.0 / (1.0 + self.lam), 1.0 + self.lam)

    def b(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1] + (self.dim,))
        if not self.has_drift:
            return out
        for i, (K, A, P) in enumerate(self._modes["drift"]):
            out[..., i] = np.cos(pts @ K.T + P) @ A
        return out

    def c(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if not self.has_potential:
            return np.zeros(pts.shape[:-1])
        K, A, P = self._modes["potential"]
        # nonpositive potential keeps the Dirichlet problem coercive
        return -np.abs(np.cos(pts @ K.T + P) @ A)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FIELD_FORMAT,
            "version": FIELD_VERSION,
            "mode": self.mode,
            "seed": int(self.seed),
            "lambda": float(self.lam),
            "alpha": float(self.alpha),
            "dim": int(self.dim),
            "params": _jsonable(self.params),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CoefficientField":
        if d.get("format") != FIELD_FORMAT or int(d.get("version", -1)) != FIELD_VERSION:
            raise ValueError("not a supported coefficient-field document")
        return make_hoelder_field(int(d["seed"]), float(d["lambda"]), float(d["alpha"]), int(d["dim"]),
                                  d["mode"], **d.get("params", {}))

    @classmethod
    def from_json(cls, text: str) -> "CoefficientField":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _eigen_floor(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # Gershgorin screen first; only matrices that might leave [lo, hi] are decomposed
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    off = np.sum(np.abs(a), axis=-1) - np.abs(diag)
    bad = np.any((diag - off < lo) | (diag + off > hi), axis=-1)
    if np.any(bad):
        w, V = np.linalg.eigh(a[bad])
        w = np.clip(w, lo, hi)
        a = a.copy()
        a[bad] = np.einsum("...ij,...j,...kj->...ik", V, w, V)
    return a


def _fourier_modes(rng, dim, count, kmin, kmax):
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    K = d * rng.uniform(kmin, kmax, size=(count, 1))
    A = rng.standard_normal(count)
    P = rng.uniform(0.0, 2.0 * np.pi, size=count)
    return K, A, P


def _hoelder_seminorm(K, A, alpha):
    # each mode A cos(k.x + p) has |f(y) - f(z)| <= |A| min(2, |k||y-z|) <= |A| 2^(1-a) |k|^a |y-z|^a
    return float(np.sum(np.abs(A) * 2.0 ** (1.0 - alpha) * np.linalg.norm(K, axis=1) ** alpha))


def make_hoelder_field(seed: int, lam: float, alpha: float, dim: int, mode: str = "identity",
                       **params) -> CoefficientField:
    """Construct a coefficient field meeting the ellipticity and Hölder bounds.

    Parameters
    ----------
    seed : int
        Seed for ``numpy.random.default_rng`` (only ``random_smoothed`` draws).
    lam : float
        Ellipticity/Hölder constant, ``lam >= 0``.
    alpha : float
        Hölder exponent in ``(0, 1)``.
    dim : {2, 3}
    mode : {"identity", "radial_bump", "random_smoothed"}
        ``radial_bump`` gives ``a = I + lam*min(|x-x0|^alpha, 1)*M``; optional
        params ``x0`` (default origin) and ``M`` (symmetric, operator norm 1).
        ``random_smoothed`` sums band-limited Fourier modes rescaled to the
        Hölder bound; optional params ``modes``, ``kmin``, ``kmax``, ``drift``,
        ``potential``.

    Returns
    -------
    CoefficientField

    Raises
    ------
    ValueError
        On invalid parameters or when ``a`` would leave the ellipticity band.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if not lam >= 0:
        raise ValueError("lambda must be nonnegative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    modes: dict = {}
    stored: dict = {}
    if mode == "radial_bump":
        x0 = np.asarray(params.get("x0", np.zeros(dim)), dtype=float)
        M = np.asarray(params.get("M", default_bump_matrix(dim)), dtype=float)
        if x0.shape != (dim,) or M.shape != (dim, dim):
            raise ValueError("x0/M shape mismatch")
        if np.max(np.abs(M - M.T)) > 1e-14:
            raise ValueError("M must be symmetric")
        nrm = np.linalg.norm(M, 2)
        if not nrm > 0:
            raise ValueError("M must be nonzero")
        M = M / nrm
        w = np.linalg.eigvalsh(M)
        # extreme values of a are reached where min(|x-x0|^alpha, 1) = 1
        if 1.0 + lam * w.min() < 1.0 / (1.0 + lam) - 1e-15 or 1.0 + lam * w.max() > 1.0 + lam + 1e-15:
            raise ValueError("lambda and M violate ellipticity")
        modes.update(x0=x0, M=M)
        stored.update(x0=x0.tolist(), M=M.tolist())
    elif mode == "random_smoothed":
        count = int(params.get("modes", 6))
        kmin, kmax = float(params.get("kmin", np.pi)), float(params.get("kmax", 4 * np.pi))
        drift = bool(params.get("drift", True))
        potential = bool(params.get("potential", False))
        rng = np.random.default_rng(seed)
        entries = {}
        for i in range(dim):
            for j in range(i, dim):
                entries[(i, j)] = _fourier_modes(rng, dim, count, kmin, kmax)
        # Hölder bound and Gershgorin bound (row sums <= lam/(1+lam))
        hs = max(_hoelder_seminorm(K, A, alpha) for K, A, _ in entries.values())
        amp = max(np.sum(np.abs(A)) for _, A, _ in entries.values())
        clip = lam / ((1.0 + lam) * dim)
        scale = min(lam / hs, clip / amp) if lam > 0 else 0.0
        entries = {ij: (K, A * scale, P) for ij, (K, A, P) in entries.items()}
        modes.update(entries=entries, clip=clip)
        dr = []
        for _ in range(dim):
            K, A, P = _fourier_modes(rng, dim, count, kmin, kmax)
            dr.append((K, A * (lam / np.sqrt(dim)) / max(np.sum(np.abs(A)), 1e-300), P))
        modes["drift"] = dr
        K, A, P = _fourier_modes(rng, dim, count, kmin, kmax)
        modes["potential"] = (K, A * lam / max(np.sum(np.abs(A)), 1e-300), P)
        stored.update(modes=count, kmin=kmin, kmax=kmax, drift=drift, potential=potential)
    return CoefficientField(dim, float(lam), float(alpha), mode, int(seed), stored, modes)


# ---------------------------------------------------------------------------
# square roots

def matrix_sqrt(a) -> np.ndarray:
    """Symmetric positive-definite square root via the eigen-decomposition."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if np.max(np.abs(a - a.T)) > 1e-12 * max(1.0, np.max(np.abs(a))):
        raise ValueError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (a + a.T))
    if w.min() <= 0:
        raise ValueError("matrix is not positive definite")
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def matrix_sqrt_batch(a: np.ndarray) -> np.ndarray:
    """Square roots of a stack of symmetric positive-definite matrices."""
    w, V = np.linalg.eigh(0.5 * (a + np.swapaxes(a, -1, -2)))
    if np.any(w <= 0):
        raise ValueError("matrix is not positive definite")
    S = np.einsum("...ij,...j,...kj->...ik", V, np.sqrt(w), V)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


# ---------------------------------------------------------------------------
# audits

@dataclass
class FieldAudit:
    min_eig: float
    max_eig: float
    hoelder_quotient: float
    max_drift: float
    max_potential: float
    symmetry_error: float
    ok: bool


def ellipticity_audit(fld: CoefficientField, pts) -> tuple[float, float, float]:
    """Extreme eigenvalues of ``a`` and its worst asymmetry over ``pts``."""
    a = fld.a(np.asarray(pts, dtype=float))
    w = np.linalg.eigvalsh(a)
    asym = float(np.max(np.linalg.norm(a - np.swapaxes(a, -1, -2), ord=2, axis=(-2, -1)))) if a.size else 0.0
    return float(w.min()), float(w.max()), asym


def hoelder_audit(fld: CoefficientField, n_pairs: int = 10_000, seed: int = 12345, half_width: float = 1.0,
                  center=None) -> FieldAudit:
    """Sampled check of every field invariant.

    Pairs are half uniform in the box and half at log-uniform small
    separations, and include pairs through the bump centre so the
    non-Lipschitz point is probed.
    """
    rng = np.random.default_rng(seed)
    n = fld.dim
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    y = c + rng.uniform(-half_width, half_width, size=(n_pairs, n))
    z = c + rng.uniform(-half_width, half_width, size=(n_pairs, n))
    half = n_pairs // 2
    d = rng.standard_normal((half, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    z[:half] = y[:half] + d * 10.0 ** rng.uniform(-6, 0, size=(half, 1))
    if fld.mode == "radial_bump":
        q = n_pairs // 10
        y[:q] = fld._modes["x0"]
    ay, az = fld.a(y), fld.a(z)
    dist = np.linalg.norm(y - z, axis=1) ** fld.alpha
    ok_pairs = dist > 0
    quot = np.max(np.abs(ay - az)[ok_pairs], axis=(-2, -1)) / dist[ok_pairs]
    g = np.stack(np.meshgrid(*([np.linspace(-half_width, half_width, 64)] * n), indexing="ij"), -1).reshape(-1, n) + c
    lo, hi, asym = ellipticity_audit(fld, np.vstack([g, y]))
    bmax = float(np.max(np.linalg.norm(fld.b(y), axis=-1)))
    cmax = float(np.max(np.abs(fld.c(y))))
    lam = fld.lam
    tol = 1e-12
    ok = (lo >= 1 / (1 + lam) - tol and hi <= 1 + lam + tol and float(quot.max()) <= lam + tol
          and bmax <= lam + tol and cmax <= lam + tol and asym <= 1e-14)
    return FieldAudit(lo, hi, float(quot.max()), bmax, cmax, asym, bool(ok))


# ---------------------------------------------------------------------------
# analytic solutions

@dataclass(frozen=True, eq=False)
class AnalyticSolution:
    """Exact solution defined on all of ``R^dim``.

    ``func`` and ``grad`` act on arrays of shape ``(..., dim)``.
    """

    dim: int
    func: Callable = dc_field(repr=False)
    grad: Callable = dc_field(repr=False)
    metadata: dict = dc_field(default_factory=dict)

    def __call__(self, pts) -> np.ndarray:
        return np.asarray(self.func(np.asarray(pts, dtype=float)))

    def gradient(self, pts) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(pts, dtype=float)))

    def contains(self, pts, margin: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.ones(pts.shape[:-1], dtype=bool)

    @property
    def bounded(self) -> bool:
        return False


def harmonic_polynomial_solution(P, shift=None) -> AnalyticSolution:
    """Exact solution ``u(x) = P(x - shift)`` for a harmonic polynomial ``P``."""
    p = as_poly(P)
    if p.degree >= 2 and not p.laplacian().is_zero(1e-10 * max(1.0, p.max_abs_coeff())):
        raise ValueError("polynomial is not harmonic")
    return polynomial_solution([p], shift=shift)


def polynomial_solution(parts: Sequence, shift=None, harmonic_check: bool = True) -> AnalyticSolution:
    """Sum of homogeneous polynomials, e.g. ``x + (x^2 - y^2)``, as an exact solution."""
    polys = [as_poly(q) for q in parts]
    dim = polys[0].dim
    s = np.zeros(dim) if shift is None else np.asarray(shift, dtype=float)
    if harmonic_check:
        for q in polys:
            if q.degree >= 2 and not q.laplacian().is_zero(1e-10 * max(1.0, q.max_abs_coeff())):
                raise ValueError("polynomial is not harmonic")
    grads = [[q.partial(i) for i in range(dim)] for q in polys]

    def func(x):
        y = x - s
        return sum(q(y) for q in polys)

    def grad(x):
        y = x - s
        return np.stack([sum(g[i](y) for g in grads) for i in range(dim)], axis=-1)

    meta = {"degree": max(q.degree for q in polys), "degrees": [q.degree for q in polys], "shift": s.tolist(),
            "polys": [(q.dim, q.degree, q.coeffs.tolist()) for q in polys]}
    return AnalyticSolution(dim, func, grad, meta)
