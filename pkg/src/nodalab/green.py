"""Zonal expansion of the three-dimensional Newtonian kernel.

``Gamma(x, y) = c3 / |x - y|`` with ``c3 = 1/(4 pi)`` expands for ``|x| < |y|`` as
``sum_k Gamma_k(y) P_{y,k}(x)``, where ``P_{y,k}(x) = sqrt(2k+1) |x|^k P_k(x.y/|x||y|)``
is the unit-normalized zonal harmonic about ``y/|y|`` and
``Gamma_k(y) = c3 |y|^(-k-1) / sqrt(2k+1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.special import eval_legendre

from .errors import DomainError
from .hhp import HarmonicPolynomial, HomogeneousPoly
from .quadrature import sphere_rule

C3 = 1.0 / (4.0 * math.pi)
DIM = 3
MAX_DEGREE = 12

# Constants fitted once with ``calibrate()`` (|y| = 1, d <= 8, 400 samples
# with |x| <= |y|/2; raw maxima 0.0736, 0.215, 0.119) and frozen with a 25%
# margin.  |Gamma_0| = c3 at |y| = 1 fixes the coefficient constant.
FITTED_REMAINDER_C = 0.092
FITTED_REMAINDER_GRAD_C = 0.27
FITTED_COEFF_C = C3
FITTED_COEFF_GRAD_C = 0.15

__all__ = [
    "C3",
    "kernel",
    "kernel_grad_y",
    "KernelExpansion",
    "expand_kernel",
    "zonal_polynomial",
    "remainder_audit",
    "RemainderAudit",
    "coefficient",
    "term_gradient_y",
    "coefficient_gradient_audit",
    "projected_coefficient",
    "scaling_exponent",
    "gradient_scaling_exponents",
    "partial_sum_errors",
    "calibrate",
]


def kernel(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return C3 / np.linalg.norm(x - y, axis=-1)


def kernel_grad_y(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    return C3 * d / np.linalg.norm(d, axis=-1, keepdims=True) ** 3


def coefficient(y, k: int) -> float:
    """``Gamma_k(y) = c3 |y|^(-k-1) / sqrt(2k+1)``."""
    ry = float(np.linalg.norm(y))
    if ry == 0.0:
        raise ValueError("pole must be nonzero")
    return C3 * ry ** (-k - 1) / math.sqrt(2 * k + 1)


def _zonal_values(x: np.ndarray, yhat: np.ndarray, k: int) -> np.ndarray:
    # |x|^k P_k(xhat . yhat), evaluated stably including x = 0
    rx = np.linalg.norm(x, axis=-1)
    t = np.where(rx > 0, (x @ yhat) / np.where(rx > 0, rx, 1.0), 1.0)
    return rx ** k * eval_legendre(k, np.clip(t, -1.0, 1.0))


@lru_cache(maxsize=None)
def _legendre_coeffs(k: int) -> tuple:
    return tuple(np.polynomial.legendre.leg2poly([0] * k + [1]))


def zonal_polynomial(yhat, k: int) -> HarmonicPolynomial:
    """Unit-normalized zonal harmonic ``sqrt(2k+1)|x|^k P_k(x.yhat)`` as a :class:`HarmonicPolynomial`.

    Built in monomial form from the Legendre coefficients, then projected
    onto the orthonormal harmonic basis with the exact sphere inner product.
    """
    yhat = np.asarray(yhat, dtype=float)
    yhat = yhat / np.linalg.norm(yhat)
    if k == 0:
        return HarmonicPolynomial.from_poly(HomogeneousPoly.constant(DIM, 1.0))
    lin = HomogeneousPoly(DIM, 1, yhat)
    r2 = HomogeneousPoly.from_terms(DIM, {(2, 0, 0): 1.0, (0, 2, 0): 1.0, (0, 0, 2): 1.0})
    total = HomogeneousPoly.zero(DIM, k)
    for j, a in enumerate(_legendre_coeffs(k)):
        if a == 0.0 or (k - j) % 2:
            continue
        term = lin.power(j) if j > 0 else HomogeneousPoly.constant(DIM, 1.0)
        if k - j > 0:
            term = term * r2.power((k - j) // 2)
        total = total + term * a
    return HarmonicPolynomial.from_poly(total * math.sqrt(2 * k + 1), tol=1e-8)


@dataclass(frozen=True, eq=False)
class KernelExpansion:
    y: np.ndarray
    degree: int
    coefficients: np.ndarray
    polys: tuple = dc_field(repr=False)

    @property
    def yhat(self) -> np.ndarray:
        return self.y / np.linalg.norm(self.y)

    def term(self, x, k: int) -> np.ndarray:
        """Closed-form ``Gamma_k(y) P_{y,k}(x)``."""
        return self.coefficients[k] * math.sqrt(2 * k + 1) * _zonal_values(np.asarray(x, dtype=float), self.yhat, k)

    def partial_sum(self, x, d: int | None = None) -> np.ndarray:
        d = self.degree if d is None else d
        x = np.asarray(x, dtype=float)
        return sum(self.term(x, k) for k in range(d + 1))

    def remainder(self, x, d: int | None = None) -> np.ndarray:
        """``R_{y,d}(x) = Gamma(x, y) - sum_{k <= d} Gamma_k(y) P_{y,k}(x)``."""
        return kernel(x, self.y) - self.partial_sum(x, d)


def expand_kernel(y, d: int) -> KernelExpansion:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape != (DIM,):
        raise ValueError("the kernel expansion is implemented for n = 3")
    if np.linalg.norm(y) == 0.0:
        raise ValueError("pole must be nonzero")
    if not 0 <= d <= MAX_DEGREE:
        raise ValueError(f"degree must lie in [0, {MAX_DEGREE}]")
    yhat = y / np.linalg.norm(y)
    polys = tuple(zonal_polynomial(yhat, k) for k in range(d + 1))
    coeffs = np.array([coefficient(y, k) for k in range(d + 1)])
    return KernelExpansion(y, d, coeffs, polys)


@dataclass
class RemainderAudit:
    degree: int
    max_ratio: float
    max_grad_ratio: float
    bound: float
    grad_bound: float

    @property
    def ok(self) -> bool:
        return np.isfinite(self.max_ratio) and self.max_ratio <= self.bound and self.max_grad_ratio <= self.grad_bound


def _remainder(x: np.ndarray, y: np.ndarray, d: int) -> np.ndarray:
    ry = float(np.linalg.norm(y))
    part = sum(C3 * ry ** (-k - 1) * _zonal_values(x, y / ry, k) for k in range(d + 1))
    return kernel(x, y) - part


def _remainder_grad_y(y: np.ndarray, d: int, x: np.ndarray, step: float) -> np.ndarray:
    out = np.empty(x.shape)
    for i in range(DIM):
        e = np.zeros(DIM)
        e[i] = step
        out[:, i] = (_remainder(x, y + e, d) - _remainder(x, y - e, d)) / (2 * step)
    return out


def remainder_audit(exp: KernelExpansion, samples) -> RemainderAudit:
    """Worst ratios ``|R| / (|x|^(d+1)|y|^(-2-d))`` and ``|grad_y R| / (|x|^(d+1)|y|^(-3-d))``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    ry = float(np.linalg.norm(exp.y))
    rx = np.linalg.norm(x, axis=1)
    if np.any(rx > ry / 2 * (1 + 1e-12)):
        raise DomainError("samples must satisfy |x| <= |y|/2")
    d = exp.degree
    R = np.abs(exp.remainder(x))
    scale = rx ** (d + 1) * ry ** (1 - DIM - d)
    nz = scale > 0
    ratio = float(np.max(R[nz] / scale[nz])) if np.any(nz) else 0.0
    G = np.linalg.norm(_remainder_grad_y(exp.y, d, x, 1e-5 * ry), axis=1)
    gscale = rx ** (d + 1) * ry ** (-DIM - d)
    gratio = float(np.max(G[nz] / gscale[nz])) if np.any(nz) else 0.0
    return RemainderAudit(d, ratio, gratio, FITTED_REMAINDER_C * 2 ** (d + 1), FITTED_REMAINDER_GRAD_C * 2 ** (d + 1))


def term_gradient_y(y, x, k: int, step: float | None = None) -> np.ndarray:
    """Central-difference ``grad_y`` of the degree-``k`` term at ``x``."""
    y = np.asarray(y, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    step = step or 1e-5 * float(np.linalg.norm(y))
    out = np.empty(x.shape)
    for i in range(DIM):
        e = np.zeros(DIM)
        e[i] = step
        tp = coefficient(y + e, k) * math.sqrt(2 * k + 1) * _zonal_values(x, (y + e) / np.linalg.norm(y + e), k)
        tm = coefficient(y - e, k) * math.sqrt(2 * k + 1) * _zonal_values(x, (y - e) / np.linalg.norm(y - e), k)
        out[:, i] = (tp - tm) / (2 * step)
    return out


def coefficient_gradient_audit(y, k: int, x=None) -> float:
    """Ratio ``|grad_y(Gamma_k P_{y,k})(x)| / ((4/3)^k k^(1/2) |y|^(-2-k) |x|^k)``.

    The default sample set is 64 fixed points on ``|x| = |y|/2``.
    """
    if not 0 <= k <= 8:
        raise ValueError("k must lie in [0, 8]")
    y = np.asarray(y, dtype=float)
    ry = float(np.linalg.norm(y))
    if x is None:
        rng = np.random.default_rng(7)
        v = rng.standard_normal((64, DIM))
        x = 0.5 * ry * v / np.linalg.norm(v, axis=1, keepdims=True)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.linalg.norm(term_gradient_y(y, x, k), axis=1)
    rx = np.linalg.norm(x, axis=1)
    bound = (4.0 / 3.0) ** k * max(k, 1) ** (DIM / 2 - 1) * ry ** (1 - DIM - k) * rx ** k
    nz = bound > 0
    return float(np.max(g[nz] / bound[nz])) if np.any(nz) else 0.0


def projected_coefficient(y, k: int, rho: float | None = None) -> float:
    """``Gamma_k(y)`` recovered by projecting the kernel on ``|x| = rho`` onto ``P_{y,k}``.

    The sphere average of ``Gamma(rho w, y) P_{y,k}(w)`` equals ``Gamma_k(y) rho^k``;
    with ``rho = |y|/4`` the neglected tail of the quadrature is below ``4^-32``.
    """
    y = np.asarray(y, dtype=float)
    ry = float(np.linalg.norm(y))
    rho = 0.25 * ry if rho is None else rho
    nodes, w = sphere_rule(DIM)
    P = math.sqrt(2 * k + 1) * _zonal_values(nodes, y / ry, k)
    return float(w @ (kernel(rho * nodes, y) * P)) / rho ** k


def scaling_exponent(y, k: int, t: float = 2.0) -> float:
    """Exponent ``log(Gamma_k(t y)/Gamma_k(y)) / log t`` from projected coefficients."""
    y = np.asarray(y, dtype=float)
    return math.log(abs(projected_coefficient(t * y, k) / projected_coefficient(y, k))) / math.log(t)


def gradient_scaling_exponents(k: int, y=None, x=None) -> tuple[float, float]:
    """Fitted ``|y|`` and ``|x|`` exponents of ``|grad_y(Gamma_k P_{y,k})(x)|`` from two-point fits."""
    y = np.array([0.3, -0.5, 0.8]) if y is None else np.asarray(y, dtype=float)
    y = y / np.linalg.norm(y)
    x = np.array([[0.2, 0.1, -0.15]]) if x is None else np.atleast_2d(x)
    x = 0.25 * x / np.linalg.norm(x)
    g = lambda yy, xx: float(np.linalg.norm(term_gradient_y(yy, xx, k)))
    ey = math.log(g(2 * y, x) / g(y, x)) / math.log(2.0)
    ex = math.log(g(y, 0.5 * x) / g(y, x)) / math.log(0.5) if k > 0 else 0.0
    return ey, ex


def partial_sum_errors(y, x, dmax: int = 10) -> np.ndarray:
    """``|R_{y,d}(x)|`` for ``d = 0..dmax``."""
    exp = expand_kernel(y, min(dmax, MAX_DEGREE))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.array([float(np.max(np.abs(exp.remainder(x, d)))) for d in range(dmax + 1)])


def calibrate(n_samples: int = 400, dmax: int = 8, seed: int = 0) -> dict:
    """Raw worst ratios on the calibration set used to freeze the fitted constants."""
    rng = np.random.default_rng(seed)
    y = np.array([0.0, 0.0, 1.0])
    v = rng.standard_normal((n_samples, DIM))
    x = v / np.linalg.norm(v, axis=1, keepdims=True) * (0.5 * rng.random(n_samples) ** (1 / 3))[:, None]
    out = {"remainder": [], "remainder_grad": []}
    for d in range(dmax + 1):
        a = remainder_audit(expand_kernel(y, d), x)
        out["remainder"].append(a.max_ratio / 2 ** (d + 1))
        out["remainder_grad"].append(a.max_grad_ratio / 2 ** (d + 1))
    out["coefficient_grad"] = [coefficient_gradient_audit(y, k) for k in range(9)]
    return out
