"""Homogeneous harmonic polynomials in two and three variables.

Polynomials are stored in monomial form (``HomogeneousPoly``) and, when
harmonic, in coordinates of an orthonormal basis of the space of degree-d
harmonics (``HarmonicPolynomial``).  The inner product is the sphere average

    <P, Q> = mean over the unit sphere of P * Q,

computed from closed-form monomial moments, never by quadrature.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb, factorial, sqrt
from typing import Iterable, Sequence

import numpy as np

MAX_DEGREE = 12
SYMBOLIC_TOL = 1e-10

__all__ = [
    "MAX_DEGREE",
    "HomogeneousPoly",
    "HarmonicPolynomial",
    "monomials",
    "sphere_moment",
    "basis",
    "sphere_inner",
    "ball_mean_square",
    "gradient_identity_check",
    "sup_norm_ratio",
    "decompose_invariant",
    "invariant_subspace",
    "directional_norm",
    "polynomial_split_test",
    "almost_invariant_decomposition",
    "SplitResult",
    "InvariantSplit",
    "random_harmonic",
    "from_monomial_list",
    "space_dim",
    "sphere_norm",
    "as_poly",
]


# ---------------------------------------------------------------------------
# monomial bookkeeping

@lru_cache(maxsize=None)
def monomials(dim: int, degree: int) -> np.ndarray:
    """Exponent table of all degree-``degree`` monomials, shape (m, dim).

    Order is lexicographic with the first exponent descending, so
    ``monomials(2, 2)`` is ``[[2,0],[1,1],[0,2]]``.
    """
    if degree < 0:
        return np.zeros((0, dim), dtype=np.int64)
    rows = [e for e in itertools.product(range(degree, -1, -1), repeat=dim) if sum(e) == degree]
    out = np.array(rows, dtype=np.int64).reshape(-1, dim)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _monomial_index(dim: int, degree: int) -> dict:
    return {tuple(int(v) for v in e): i for i, e in enumerate(monomials(dim, degree))}


@lru_cache(maxsize=None)
def _moment_fraction(exps: tuple) -> Fraction:
    # mean of prod x_i^{a_i} over S^{n-1}: prod (a_i-1)!! / (n (n+2) ... (n+|a|-2))
    if any(a % 2 for a in exps):
        return Fraction(0)
    n = len(exps)
    num = 1
    for a in exps:
        for j in range(a - 1, 0, -2):
            num *= j
    den = 1
    for j in range(sum(exps) // 2):
        den *= n + 2 * j
    return Fraction(num, den)


def sphere_moment(exps: Sequence[int]) -> float:
    """Sphere average of the monomial with exponents ``exps``."""
    return float(_moment_fraction(tuple(int(a) for a in exps)))


@lru_cache(maxsize=None)
def _moment_matrix(dim: int, d1: int, d2: int) -> np.ndarray:
    e1, e2 = monomials(dim, d1), monomials(dim, d2)
    out = np.zeros((len(e1), len(e2)))
    for i, a in enumerate(e1):
        for j, b in enumerate(e2):
            out[i, j] = float(_moment_fraction(tuple(int(v) for v in a + b)))
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# general homogeneous polynomials

class HomogeneousPoly:
    """A homogeneous polynomial stored by monomial coefficients.

    Parameters
    ----------
    dim : int
        Number of variables.
    degree : int
        Total degree (``-1`` encodes the zero polynomial from differentiating
        a constant).
    coeffs : array_like
        Coefficients in the order of ``monomials(dim, degree)``.
    """

    __slots__ = ("dim", "degree", "coeffs")

    def __init__(self, dim: int, degree: int, coeffs):
        self.dim = int(dim)
        self.degree = int(degree)
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        if len(c) != len(monomials(self.dim, self.degree)):
            raise ValueError("coefficient count does not match the monomial table")
        self.coeffs = c

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls, dim: int, degree: int) -> "HomogeneousPoly":
        return cls(dim, degree, np.zeros(len(monomials(dim, degree))))

    @classmethod
    def from_terms(cls, dim: int, terms: dict) -> "HomogeneousPoly":
        """Build from ``{exponent tuple: coefficient}``; all exponents must share a degree."""
        degrees = {sum(e) for e in terms}
        if len(degrees) != 1:
            raise ValueError("terms are not homogeneous")
        degree = degrees.pop()
        idx = _monomial_index(dim, degree)
        c = np.zeros(len(idx))
        for e, v in terms.items():
            c[idx[tuple(e)]] += v
        return cls(dim, degree, c)

    @classmethod
    def coordinate(cls, dim: int, i: int) -> "HomogeneousPoly":
        e = [0] * dim
        e[i] = 1
        return cls.from_terms(dim, {tuple(e): 1.0})

    @classmethod
    def constant(cls, dim: int, value: float = 1.0) -> "HomogeneousPoly":
        return cls(dim, 0, [value])

    # -- algebra ----------------------------------------------------------
    def _check(self, other: "HomogeneousPoly") -> None:
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        if other.degree != self.degree:
            raise ValueError("degree mismatch")

    def __add__(self, other):
        self._check(other)
        return HomogeneousPoly(self.dim, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return HomogeneousPoly(self.dim, self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return HomogeneousPoly(self.dim, self.degree, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, HomogeneousPoly):
            if other.dim != self.dim:
                raise ValueError("dimension mismatch")
            deg = self.degree + other.degree
            idx = _monomial_index(self.dim, deg)
            out = np.zeros(len(idx))
            ea, eb = monomials(self.dim, self.degree), monomials(self.dim, other.degree)
            for i in np.nonzero(self.coeffs)[0]:
                for j in np.nonzero(other.coeffs)[0]:
                    out[idx[tuple(int(v) for v in ea[i] + eb[j])]] += self.coeffs[i] * other.coeffs[j]
            return HomogeneousPoly(self.dim, deg, out)
        return HomogeneousPoly(self.dim, self.degree, self.coeffs * float(other))

    __rmul__ = __mul__

    def __truediv__(self, s: float):
        return HomogeneousPoly(self.dim, self.degree, self.coeffs / float(s))

    def power(self, k: int) -> "HomogeneousPoly":
        out = HomogeneousPoly.constant(self.dim)
        for _ in range(k):
            out = out * self
        return out

    def partial(self, i: int) -> "HomogeneousPoly":
        """Partial derivative in variable ``i``."""
        if self.degree <= 0:
            return HomogeneousPoly.zero(self.dim, self.degree - 1) if self.degree == 0 else self
        idx = _monomial_index(self.dim, self.degree - 1)
        out = np.zeros(len(idx))
        for c, e in zip(self.coeffs, monomials(self.dim, self.degree)):
            if c == 0.0 or e[i] == 0:
                continue
            f = e.copy()
            f[i] -= 1
            out[idx[tuple(int(v) for v in f)]] += c * e[i]
        return HomogeneousPoly(self.dim, self.degree - 1, out)

    def directional(self, v) -> "HomogeneousPoly":
        """The derivative ``v . grad P`` (degree one lower)."""
        v = np.asarray(v, dtype=float)
        out = HomogeneousPoly.zero(self.dim, self.degree - 1)
        for i in range(self.dim):
            if v[i] != 0.0:
                out = out + self.partial(i) * v[i]
        return out

    def laplacian(self) -> "HomogeneousPoly":
        if self.degree < 2:
            return HomogeneousPoly.zero(self.dim, -1)
        out = HomogeneousPoly.zero(self.dim, self.degree - 2)
        for i in range(self.dim):
            out = out + self.partial(i).partial(i)
        return out

    def is_zero(self, tol: float = SYMBOLIC_TOL) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))

    def max_abs_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    # -- evaluation -------------------------------------------------------
    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.degree < 0:
            return np.zeros(pts.shape[:-1])
        return _evaluate(self.coeffs, monomials(self.dim, self.degree), pts)

    def gradient(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.stack([self.partial(i)(pts) for i in range(self.dim)], axis=-1)

    def __repr__(self) -> str:
        terms = []
        for c, e in zip(self.coeffs, monomials(self.dim, self.degree)):
            if c != 0.0:
                terms.append(f"{c:+.6g}*" + "*".join(f"x{i}^{k}" for i, k in enumerate(e) if k))
        return f"HomogeneousPoly(dim={self.dim}, degree={self.degree}, {' '.join(terms) or '0'})"


def _evaluate(coeffs: np.ndarray, exps: np.ndarray, pts: np.ndarray, chunk: int = 65536) -> np.ndarray:
    shape = pts.shape[:-1]
    flat = pts.reshape(-1, pts.shape[-1])
    deg = int(exps.sum(axis=1).max()) if len(exps) else 0
    out = np.empty(flat.shape[0])
    for s in range(0, flat.shape[0], chunk):
        p = flat[s:s + chunk]
        # power tables x_k^j for j <= deg
        pw = np.ones((p.shape[1], deg + 1, p.shape[0]))
        for j in range(1, deg + 1):
            pw[:, j] = pw[:, j - 1] * p.T
        vals = np.ones((len(exps), p.shape[0]))
        for k in range(p.shape[1]):
            vals *= pw[k, exps[:, k]]
        out[s:s + chunk] = coeffs @ vals
    return out.reshape(shape)


def as_poly(P) -> HomogeneousPoly:
    if isinstance(P, HarmonicPolynomial):
        return P.poly
    if isinstance(P, HomogeneousPoly):
        return P
    raise TypeError(f"expected a polynomial, got {type(P).__name__}")


# ---------------------------------------------------------------------------
# orthonormal harmonic bases

def _complex_power(d: int) -> tuple[HomogeneousPoly, HomogeneousPoly]:
    # real and imaginary parts of (x + i y)^d as polynomials in (x, y)
    re, im = {}, {}
    for j in range(d + 1):
        c = comb(d, j)
        e = (d - j, j)
        if j % 2 == 0:
            re[e] = c * (-1) ** (j // 2)
        else:
            im[e] = c * (-1) ** ((j - 1) // 2)
    zero = {(d, 0): 0.0}
    return HomogeneousPoly.from_terms(2, re or zero), HomogeneousPoly.from_terms(2, im or zero)


def _lift(p2: HomogeneousPoly, dim: int) -> HomogeneousPoly:
    # embed a polynomial in (x, y) into dim variables
    terms = {tuple(int(v) for v in e) + (0,) * (dim - 2): c
             for e, c in zip(monomials(2, p2.degree), p2.coeffs)}
    return HomogeneousPoly.from_terms(dim, terms)


def _raw_basis_3d(l: int) -> list[HomogeneousPoly]:
    # real solid harmonics r^l P_l^m(cos t) {cos, sin}(m phi) written in x, y, z
    x2 = HomogeneousPoly.from_terms(3, {(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 2): 1.0})
    z = HomogeneousPoly.coordinate(3, 2)
    sines, cosines = [], []
    for m in range(l + 1):
        pi = HomogeneousPoly.zero(3, l - m)
        for k in range((l - m) // 2 + 1):
            coef = (-1) ** k * comb(l, k) * comb(2 * l - 2 * k, l) * factorial(l - 2 * k) / factorial(l - 2 * k - m)
            coef /= 2 ** l
            pi = pi + (x2.power(k) * z.power(l - 2 * k - m)) * coef
        re, im = _complex_power(m) if m > 0 else (HomogeneousPoly.constant(2), None)
        cosines.append(pi * _lift(re, 3))
        if m > 0:
            sines.append(pi * _lift(im, 3))
    return sines[::-1] + cosines


def _exact_norm_sq(p: HomogeneousPoly) -> Fraction:
    e = monomials(p.dim, p.degree)
    nz = np.nonzero(p.coeffs)[0]
    tot = Fraction(0)
    for i in nz:
        for j in nz:
            m = _moment_fraction(tuple(int(v) for v in e[i] + e[j]))
            if m:
                tot += Fraction(float(p.coeffs[i])) * Fraction(float(p.coeffs[j])) * m
    return tot


@lru_cache(maxsize=None)
def _basis_matrix(dim: int, d: int) -> np.ndarray:
    """Rows are monomial coefficients of the orthonormal basis of degree-d harmonics."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if d < 0 or d > MAX_DEGREE:
        raise ValueError(f"degree must lie in [0, {MAX_DEGREE}]")
    if d == 0:
        raw = [HomogeneousPoly.constant(dim)]
    elif dim == 2:
        raw = list(_complex_power(d))
    else:
        raw = _raw_basis_3d(d)
    rows = [p.coeffs / sqrt(float(_exact_norm_sq(p))) for p in raw]
    out = np.array(rows)
    out.setflags(write=False)
    return out


def space_dim(dim: int, d: int) -> int:
    if d < 0:
        return 0
    if d == 0:
        return 1
    return 2 if dim == 2 else 2 * d + 1


# ---------------------------------------------------------------------------
# harmonic polynomials

@dataclass(frozen=True, eq=False)
class HarmonicPolynomial:
    """Degree-``degree`` harmonic polynomial in orthonormal-basis coordinates."""

    dim: int
    degree: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if len(c) != space_dim(self.dim, self.degree):
            raise ValueError("coefficient count does not match the harmonic space dimension")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def poly(self) -> HomogeneousPoly:
        if self.degree < 0:
            return HomogeneousPoly.zero(self.dim, -1)
        return HomogeneousPoly(self.dim, self.degree, self.coeffs @ _basis_matrix(self.dim, self.degree))

    @classmethod
    def from_poly(cls, p: HomogeneousPoly, tol: float = 1e-9) -> "HarmonicPolynomial":
        """Coordinates of a harmonic monomial-form polynomial; raises if not harmonic."""
        if p.degree < 0:
            return cls(p.dim, p.degree, np.zeros(0))
        B = _basis_matrix(p.dim, p.degree)
        M = _moment_matrix(p.dim, p.degree, p.degree)
        c = B @ M @ p.coeffs
        resid = p.coeffs - c @ B
        scale = max(1.0, p.max_abs_coeff())
        if np.max(np.abs(resid)) > tol * scale:
            raise ValueError("polynomial is not harmonic")
        return cls(p.dim, p.degree, c)

    @classmethod
    def from_terms(cls, dim: int, terms: dict) -> "HarmonicPolynomial":
        return cls.from_poly(HomogeneousPoly.from_terms(dim, terms))

    def __call__(self, pts) -> np.ndarray:
        return self.poly(pts)

    def gradient(self, pts) -> np.ndarray:
        return self.poly.gradient(pts)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def normalized(self) -> "HarmonicPolynomial":
        n = self.norm()
        if n == 0.0:
            raise ValueError("zero polynomial cannot be normalized")
        return HarmonicPolynomial(self.dim, self.degree, self.coeffs / n)

    def __add__(self, other: "HarmonicPolynomial"):
        if (other.dim, other.degree) != (self.dim, self.degree):
            raise ValueError("dimension or degree mismatch")
        return HarmonicPolynomial(self.dim, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other: "HarmonicPolynomial"):
        if (other.dim, other.degree) != (self.dim, self.degree):
            raise ValueError("dimension or degree mismatch")
        return HarmonicPolynomial(self.dim, self.degree, self.coeffs - other.coeffs)

    def __mul__(self, s: float):
        return HarmonicPolynomial(self.dim, self.degree, self.coeffs * float(s))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def partial(self, i: int) -> "HarmonicPolynomial":
        return HarmonicPolynomial(self.dim, self.degree - 1, _derivative_matrix(self.dim, self.degree, i) @ self.coeffs)

    def directional(self, v) -> "HarmonicPolynomial":
        v = np.asarray(v, dtype=float)
        c = sum(v[i] * _derivative_matrix(self.dim, self.degree, i) for i in range(self.dim)) @ self.coeffs
        return HarmonicPolynomial(self.dim, self.degree - 1, c)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "degree": self.degree, "coefficients": [float(c) for c in self.coeffs]}

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonicPolynomial":
        return cls(int(d["dim"]), int(d["degree"]), np.asarray(d["coefficients"], dtype=float))


def basis(dim: int, d: int) -> list[HarmonicPolynomial]:
    """Orthonormal basis of the degree-``d`` homogeneous harmonic polynomials.

    In two variables the basis is ``sqrt(2) Re((x+iy)^d), sqrt(2) Im((x+iy)^d)``;
    in three it consists of the real solid harmonics normalized to unit
    sphere average, ordered by ``m = -d .. d``.
    """
    k = space_dim(dim, d)
    _basis_matrix(dim, d)
    return [HarmonicPolynomial(dim, d, np.eye(k)[j]) for j in range(k)]


@lru_cache(maxsize=None)
def _derivative_matrix(dim: int, d: int, i: int) -> np.ndarray:
    # matrix of d/dx_i from degree-d harmonic coordinates to degree-(d-1) coordinates
    if d <= 0:
        return np.zeros((0, space_dim(dim, d)))
    B = _basis_matrix(dim, d)
    Bm = _basis_matrix(dim, d - 1)
    M = _moment_matrix(dim, d - 1, d - 1)
    cols = []
    for row in B:
        q = HomogeneousPoly(dim, d, row).partial(i)
        cols.append(Bm @ M @ q.coeffs)
    out = np.array(cols).T
    out.setflags(write=False)
    return out


def sphere_inner(P1, P2) -> float:
    """Sphere average of ``P1 * P2`` from exact monomial moments."""
    p, q = as_poly(P1), as_poly(P2)
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    if p.degree < 0 or q.degree < 0:
        return 0.0
    return float(p.coeffs @ _moment_matrix(p.dim, p.degree, q.degree) @ q.coeffs)


def sphere_norm(P) -> float:
    return sqrt(max(sphere_inner(P, P), 0.0))


def ball_mean_square(P) -> float:
    """Ball average of ``P**2`` over the unit ball, from moments.

    For a homogeneous degree-d monomial the ball mean is ``n/(n+deg)`` times
    the sphere mean, so for ``P**2`` the factor is ``n/(n+2d)``.
    """
    p = as_poly(P)
    return p.dim / (p.dim + 2 * p.degree) * sphere_inner(p, p)


def gradient_identity_check(P1: HarmonicPolynomial, P2: HarmonicPolynomial) -> tuple[float, float]:
    """Return ``(<grad P1, grad P2>, d(2d+n-2)<P1, P2>)``."""
    if P1.degree != P2.degree:
        raise ValueError("unequal degrees")
    if P1.dim != P2.dim:
        raise ValueError("dimension mismatch")
    p, q = as_poly(P1), as_poly(P2)
    lhs = sum(sphere_inner(p.partial(i), q.partial(i)) for i in range(p.dim))
    d, n = P1.degree, P1.dim
    return float(lhs), float(d * (2 * d + n - 2) * sphere_inner(p, q))


def _sphere_points(dim: int, count: int) -> np.ndarray:
    if dim == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    i = np.arange(count) + 0.5
    z = 1 - 2 * i / count
    phi = np.pi * (1 + 5 ** 0.5) * i
    s = np.sqrt(1 - z * z)
    pts = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    return np.vstack([pts, np.eye(3), -np.eye(3)])


def sup_norm_ratio(P) -> float:
    """Ratio of the sup of ``|P|`` over the unit ball to its sphere norm.

    The sup is located on the sphere by dense sampling followed by a local
    refinement of the best few samples.
    """
    from scipy.optimize import minimize

    p = as_poly(P)
    if p.degree < 1:
        raise ValueError("degree must be at least 1")
    nrm = sphere_norm(p)
    if nrm == 0.0:
        raise ValueError("zero polynomial")
    pts = _sphere_points(p.dim, 4096 if p.dim == 2 else 20000)
    vals = np.abs(p(pts))
    best = float(vals.max())

    def to_pt(ang):
        if p.dim == 2:
            return np.array([np.cos(ang[0]), np.sin(ang[0])])
        t, f = ang
        return np.array([np.sin(t) * np.cos(f), np.sin(t) * np.sin(f), np.cos(t)])

    for k in np.argsort(vals)[-4:]:
        x = pts[k]
        ang0 = [np.arctan2(x[1], x[0])] if p.dim == 2 else [np.arccos(np.clip(x[2], -1, 1)), np.arctan2(x[1], x[0])]
        res = minimize(lambda a: -abs(float(p(to_pt(a)[None])[0])), ang0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000})
        best = max(best, -float(res.fun))
    return best / nrm


# ---------------------------------------------------------------------------
# invariance and splitting

def _null_space(A: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    # orthonormal columns spanning ker A
    ncols = A.shape[1]
    if A.size == 0 or not np.any(A):
        return np.eye(ncols)
    _, s, vt = np.linalg.svd(A)
    tol = rtol * max(1.0, s[0])
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def invariant_subspace(dim: int, d: int, dirs) -> np.ndarray:
    """Orthonormal coordinates spanning degree-d harmonics invariant along all ``dirs``."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float)) if len(dirs) else np.zeros((0, dim))
    k = space_dim(dim, d)
    if d == 0 or len(dirs) == 0:
        return np.eye(k)
    blocks = [sum(v[i] * _derivative_matrix(dim, d, i) for i in range(dim)) for v in dirs]
    return _null_space(np.vstack(blocks))


def decompose_invariant(P: HarmonicPolynomial, v) -> tuple[HarmonicPolynomial, HarmonicPolynomial]:
    """Split ``P`` into its ``v``-invariant projection and the orthogonal rest."""
    v = np.asarray(v, dtype=float)
    if v.shape != (P.dim,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
        raise ValueError("v must be a unit vector of matching dimension")
    K = invariant_subspace(P.dim, P.degree, [v])
    inv = HarmonicPolynomial(P.dim, P.degree, K @ (K.T @ P.coeffs))
    return inv, P - inv


def directional_norm(P, v) -> float:
    """Sphere norm of the directional derivative ``v . grad P``."""
    return sphere_norm(as_poly(P).directional(v))


@dataclass
class SplitResult:
    """Outcome of the cone-splitting check for a homogeneous polynomial.

    ``splits`` records whether ``P - P(x0)`` is homogeneous about ``x0``;
    ``invariant`` whether ``x0 . grad P`` vanishes identically;
    ``direction_added`` spans ``x0`` and ``V`` when both hold.
    """

    splits: bool
    invariant: bool
    direction_added: np.ndarray | None
    residual: float
    derivative_residual: float

    def __iter__(self):
        yield self.splits
        yield self.direction_added


def polynomial_split_test(P, x0, V=None) -> SplitResult:
    """Symbolic test that ``P - P(x0)`` is 0-symmetric (homogeneous) about ``x0``.

    Using Euler's identity the condition ``d (P(y) - P(x0)) = grad P(y) . (y - x0)``
    reduces to the polynomial identity ``x0 . grad P - d P(x0) = 0``, which is
    checked on coefficients.

    Parameters
    ----------
    P : HomogeneousPoly or HarmonicPolynomial
    x0 : array_like
        Second vertex.
    V : array_like, optional
        Rows spanning a subspace along which ``P`` is already invariant.
    """
    p = as_poly(P)
    x0 = np.asarray(x0, dtype=float)
    scale = max(1.0, p.max_abs_coeff())
    # Euler identity as the homogeneity precondition
    if p.degree > 0:
        euler = HomogeneousPoly.zero(p.dim, p.degree)
        for i in range(p.dim):
            euler = euler + p.partial(i) * HomogeneousPoly.coordinate(p.dim, i)
        if not (euler - p * p.degree).is_zero(SYMBOLIC_TOL * scale):
            raise ValueError("P is not homogeneous about the origin")
    Vm = np.zeros((0, p.dim)) if V is None or len(V) == 0 else np.atleast_2d(np.asarray(V, dtype=float))
    if len(Vm):
        for v in Vm:
            if not p.directional(v).is_zero(SYMBOLIC_TOL * scale * max(1.0, np.linalg.norm(v))):
                raise ValueError("P is not invariant along V")
        q, _ = np.linalg.qr(Vm.T)
        if np.linalg.norm(x0 - q @ (q.T @ x0)) <= 1e-12 * max(1.0, np.linalg.norm(x0)):
            raise ValueError("x0 lies in V")
    deriv = p.directional(x0)
    const = p.degree * float(p(x0[None])[0])
    # residual polynomial x0.grad P - d P(x0): degree d-1 part plus a constant
    if p.degree == 1:
        resid = abs(float(deriv.coeffs[0]) - const)
    else:
        resid = max(deriv.max_abs_coeff(), abs(const))
    deriv_res = deriv.max_abs_coeff()
    splits = resid <= SYMBOLIC_TOL * scale * max(1.0, np.linalg.norm(x0))
    invariant = deriv_res <= SYMBOLIC_TOL * scale * max(1.0, np.linalg.norm(x0))
    added = None
    if splits and invariant:
        q, _ = np.linalg.qr(np.vstack([x0[None], Vm]).T)
        added = q.T
    return SplitResult(bool(splits), bool(invariant), added, float(resid), float(deriv_res))


@dataclass
class InvariantSplit:
    """Decomposition ``P = P1 + P2`` with ``P1`` invariant along the given directions."""

    P1: HarmonicPolynomial
    P2: HarmonicPolynomial
    ratio: float
    bound: float
    eps_induced: float
    hypothesis_ok: bool

    def __iter__(self):
        yield self.P1
        yield self.P2


def almost_invariant_decomposition(P: HarmonicPolynomial, dirs, eps: float) -> InvariantSplit:
    """Project ``P`` onto the harmonics invariant along every direction in ``dirs``.

    Returns the split together with ``|P1|/|P|`` and the comparison value
    ``1 - sqrt(eps)/8``.  The hypothesis ``|d_v P|^2 <= eps |grad P|^2`` is
    checked and reported, not enforced.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    K = invariant_subspace(P.dim, P.degree, dirs)
    P1 = HarmonicPolynomial(P.dim, P.degree, K @ (K.T @ P.coeffs))
    P2 = P - P1
    grad_sq = sum(sphere_inner(P.partial(i), P.partial(i)) for i in range(P.dim)) if P.degree > 0 else 0.0
    induced = 0.0
    if grad_sq > 0:
        induced = max(directional_norm(P, v) ** 2 for v in dirs) / grad_sq
    nrm = P.norm()
    ratio = P1.norm() / nrm if nrm > 0 else 1.0
    return InvariantSplit(P1, P2, float(ratio), 1.0 - sqrt(max(eps, 0.0)) / 8.0, float(induced),
                          bool(induced <= eps * (1 + 1e-12)))


def random_harmonic(dim: int, d: int, rng: np.random.Generator) -> HarmonicPolynomial:
    """Random unit-norm harmonic polynomial (uniform on the coefficient sphere)."""
    c = rng.standard_normal(space_dim(dim, d))
    return HarmonicPolynomial(dim, d, c / np.linalg.norm(c))


def from_monomial_list(dim: int, items: Iterable) -> HomogeneousPoly:
    """Build a homogeneous polynomial from ``[(exponents, coefficient), ...]``."""
    return HomogeneousPoly.from_terms(dim, {tuple(int(a) for a in e): float(c) for e, c in items})
