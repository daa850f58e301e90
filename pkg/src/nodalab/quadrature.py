"""Fixed quadrature rules for sphere and ball averages.

Circle: 256-node trapezoid rule (exact for trigonometric degree < 256).
Sphere: Gauss-Legendre in ``cos(theta)`` times a trapezoid rule in ``phi``,
exact for polynomials of degree <= 31.
Ball: radial Gauss-Legendre with weight ``n t^(n-1)`` times the sphere rule.
All weights are normalized to sum to one, so rules return averages.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

CIRCLE_NODES = 256
SPHERE_GL = 16          # exact to degree 2*16-1 = 31 in cos(theta)
SPHERE_PHI = 32         # trapezoid in phi exact for frequencies < 32
RADIAL_GL = 16
SPHERE_EXACT_DEGREE = 31


@lru_cache(maxsize=None)
def sphere_rule(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes on the unit sphere ``S^{dim-1}`` and weights summing to one."""
    if dim == 2:
        t = 2.0 * np.pi * np.arange(CIRCLE_NODES) / CIRCLE_NODES
        nodes = np.stack([np.cos(t), np.sin(t)], axis=1)
        w = np.full(CIRCLE_NODES, 1.0 / CIRCLE_NODES)
    elif dim == 3:
        x, wx = np.polynomial.legendre.leggauss(SPHERE_GL)
        phi = 2.0 * np.pi * (np.arange(SPHERE_PHI) + 0.5) / SPHERE_PHI
        s = np.sqrt(1.0 - x * x)
        nodes = np.stack([
            (s[:, None] * np.cos(phi)[None, :]).ravel(),
            (s[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(x, SPHERE_PHI),
        ], axis=1)
        w = np.repeat(wx / 2.0, SPHERE_PHI) / SPHERE_PHI
    else:
        raise ValueError("dim must be 2 or 3")
    nodes.setflags(write=False)
    w.setflags(write=False)
    return nodes, w


@lru_cache(maxsize=None)
def ball_rule(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes in the unit ball and weights summing to one (ball average)."""
    t, wt = np.polynomial.legendre.leggauss(RADIAL_GL)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt * dim * t ** (dim - 1)
    sn, sw = sphere_rule(dim)
    nodes = (t[:, None, None] * sn[None, :, :]).reshape(-1, dim)
    w = (wt[:, None] * sw[None, :]).ravel()
    nodes.setflags(write=False)
    w.setflags(write=False)
    return nodes, w


def sphere_average(w, rho: float = 1.0, dim: int | None = None) -> float:
    """Average of the evaluator ``w`` over the sphere of radius ``rho``.

    ``w`` maps an (m, dim) array of points to m values; ``dim`` is read from
    ``w.dim`` when not given.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    dim = dim if dim is not None else int(w.dim)
    nodes, wts = sphere_rule(dim)
    return float(wts @ np.asarray(w(rho * nodes)))


def ball_average(w, rho: float = 1.0, dim: int | None = None) -> float:
    """Average of ``w`` over the ball of radius ``rho``."""
    dim = dim if dim is not None else int(w.dim)
    nodes, wts = ball_rule(dim)
    return float(wts @ np.asarray(w(rho * nodes)))
