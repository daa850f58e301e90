"""Hot loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``NODALAB_DISABLE_NUMBA`` is unset or ``0``.  Both paths return identical
results (the interpolation sums are accumulated in the same order), which
the test-suite checks directly.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    numba_installed = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba_installed = False

NUMBA_DISABLED = os.environ.get("NODALAB_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


def optional_njit(*args, **kwargs):
    def decorator(func):
        if numba_installed and not NUMBA_DISABLED:
            return njit(*args, **kwargs)(func)
        return func

    return decorator


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if numba_installed and not NUMBA_DISABLED else "numpy"


# ---------------------------------------------------------------------------
# cubic Lagrange interpolation on uniform grids

def _weights_numpy(x, lo, h, nn):
    # stencil start s (clamped) and 4 Lagrange weights for nodes s..s+3
    t = (x - lo) / h
    s = np.clip(np.floor(t).astype(np.int64) - 1, 0, nn - 4)
    u = t - s
    w = np.empty(x.shape + (4,))
    w[..., 0] = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
    w[..., 1] = u * (u - 2.0) * (u - 3.0) / 2.0
    w[..., 2] = -u * (u - 1.0) * (u - 3.0) / 2.0
    w[..., 3] = u * (u - 1.0) * (u - 2.0) / 6.0
    return s, w


def interp2_numpy(values, lo0, lo1, h, pts):
    n0, n1 = values.shape
    s0, w0 = _weights_numpy(pts[:, 0], lo0, h, n0)
    s1, w1 = _weights_numpy(pts[:, 1], lo1, h, n1)
    out = np.zeros(pts.shape[0])
    for a in range(4):
        row = np.zeros(pts.shape[0])
        for b in range(4):
            row += w1[:, b] * values[s0 + a, s1 + b]
        out += w0[:, a] * row
    return out


def interp3_numpy(values, lo0, lo1, lo2, h, pts):
    n0, n1, n2 = values.shape
    s0, w0 = _weights_numpy(pts[:, 0], lo0, h, n0)
    s1, w1 = _weights_numpy(pts[:, 1], lo1, h, n1)
    s2, w2 = _weights_numpy(pts[:, 2], lo2, h, n2)
    out = np.zeros(pts.shape[0])
    for a in range(4):
        plane = np.zeros(pts.shape[0])
        for b in range(4):
            row = np.zeros(pts.shape[0])
            for c in range(4):
                row += w2[:, c] * values[s0 + a, s1 + b, s2 + c]
            plane += w1[:, b] * row
        out += w0[:, a] * plane
    return out


@optional_njit(cache=True)
def _weights_scalar(x, lo, h, nn, w):
    t = (x - lo) / h
    s = int(np.floor(t)) - 1
    if s < 0:
        s = 0
    if s > nn - 4:
        s = nn - 4
    u = t - s
    w[0] = -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0
    w[1] = u * (u - 2.0) * (u - 3.0) / 2.0
    w[2] = -u * (u - 1.0) * (u - 3.0) / 2.0
    w[3] = u * (u - 1.0) * (u - 2.0) / 6.0
    return s


@optional_njit(cache=True)
def interp2_numba(values, lo0, lo1, h, pts):
    n0, n1 = values.shape
    m = pts.shape[0]
    out = np.empty(m)
    w0 = np.empty(4)
    w1 = np.empty(4)
    for i in range(m):
        s0 = _weights_scalar(pts[i, 0], lo0, h, n0, w0)
        s1 = _weights_scalar(pts[i, 1], lo1, h, n1, w1)
        acc = 0.0
        for a in range(4):
            row = 0.0
            for b in range(4):
                row += w1[b] * values[s0 + a, s1 + b]
            acc += w0[a] * row
        out[i] = acc
    return out


@optional_njit(cache=True)
def interp3_numba(values, lo0, lo1, lo2, h, pts):
    n0, n1, n2 = values.shape
    m = pts.shape[0]
    out = np.empty(m)
    w0 = np.empty(4)
    w1 = np.empty(4)
    w2 = np.empty(4)
    for i in range(m):
        s0 = _weights_scalar(pts[i, 0], lo0, h, n0, w0)
        s1 = _weights_scalar(pts[i, 1], lo1, h, n1, w1)
        s2 = _weights_scalar(pts[i, 2], lo2, h, n2, w2)
        acc = 0.0
        for a in range(4):
            plane = 0.0
            for b in range(4):
                row = 0.0
                for c in range(4):
                    row += w2[c] * values[s0 + a, s1 + b, s2 + c]
                plane += w1[b] * row
            acc += w0[a] * plane
        out[i] = acc
    return out


def interpolate(values: np.ndarray, lo: np.ndarray, h: float, pts: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Tensor cubic Lagrange interpolation of nodal ``values`` at ``pts`` (m, dim)."""
    if use_numba is None:
        use_numba = backend() == "numba"
    pts = np.ascontiguousarray(pts, dtype=float)
    if values.ndim == 2:
        f = interp2_numba if use_numba else interp2_numpy
        return f(values, float(lo[0]), float(lo[1]), float(h), pts)
    f = interp3_numba if use_numba else interp3_numpy
    return f(values, float(lo[0]), float(lo[1]), float(lo[2]), float(h), pts)


# ---------------------------------------------------------------------------
# lattice enumeration of r-neighbourhoods (Minkowski content)

# fixed sub-pitch lattice shift; avoids lattice points sitting exactly on
# spheres around lattice-aligned samples, which biases the count
LATTICE_SHIFT = np.array([0.6180339887498949, 0.2360679774997898, 0.8541019662496847])


def _key_base(center, radius, pitch):
    K = int(np.ceil(radius / pitch)) + 2
    return K, 2 * K + 1


@optional_njit(cache=True)
def _neighbourhood_keys_numba(S, center, radius, rs, pitch, K, base, shift):
    m, n = S.shape
    rmax = 0.0
    for i in range(m):
        if rs[i] > rmax:
            rmax = rs[i]
    span = int(np.ceil(rmax / pitch)) + 1
    per = (2 * span + 1) ** n
    out = np.empty(0, dtype=np.int64)
    buf = np.empty(per, dtype=np.int64)
    chunks = []
    R2 = radius * radius
    k = np.empty(n, dtype=np.int64)
    lo = np.empty(n, dtype=np.int64)
    for i in range(m):
        r2 = rs[i] * rs[i]
        for j in range(n):
            lo[j] = int(np.floor((S[i, j] - center[j]) / pitch - shift[j])) - span
        cnt = 0
        for flat in range(per):
            rem = flat
            d2 = 0.0
            c2 = 0.0
            for j in range(n):
                k[j] = lo[j] + rem % (2 * span + 1)
                rem //= 2 * span + 1
                q = center[j] + pitch * (k[j] + shift[j])
                d2 += (q - S[i, j]) ** 2
                c2 += (q - center[j]) ** 2
            if d2 <= r2 and c2 <= R2:
                key = 0
                mul = 1
                for j in range(n):
                    key += (k[j] + K) * mul
                    mul *= base
                buf[cnt] = key
                cnt += 1
        chunks.append(buf[:cnt].copy())
    total = 0
    for c in chunks:
        total += c.shape[0]
    out = np.empty(total, dtype=np.int64)
    pos = 0
    for c in chunks:
        out[pos:pos + c.shape[0]] = c
        pos += c.shape[0]
    return out


def _neighbourhood_keys_numpy(S, center, radius, rs, pitch, K, base, shift):
    m, n = S.shape
    span = int(np.ceil(rs.max() / pitch)) + 1
    grid = np.stack(np.meshgrid(*([np.arange(2 * span + 1)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    mul = base ** np.arange(n, dtype=np.int64)
    out = []
    for s in range(0, m, 256):
        P = S[s:s + 256]
        lo = np.floor((P - center) / pitch - shift).astype(np.int64) - span
        k = lo[:, None, :] + grid[None, :, :]
        q = center + pitch * (k + shift)
        r2 = (rs[s:s + 256] ** 2)[:, None]
        mask = (np.sum((q - P[:, None, :]) ** 2, axis=-1) <= r2) & (np.sum((q - center) ** 2, axis=-1) <= radius * radius)
        out.append((k[mask] + K) @ mul)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def neighbourhood_lattice_count(S: np.ndarray, r, center: np.ndarray, radius: float, pitch: float,
                                use_numba: bool | None = None) -> int:
    """Number of lattice points ``center + pitch*(k + shift)`` within ``r`` of ``S`` inside the ambient ball.

    ``r`` is a scalar or one radius per point of ``S``.
    """
    if use_numba is None:
        use_numba = backend() == "numba"
    S = np.ascontiguousarray(np.atleast_2d(S), dtype=float)
    if S.shape[0] == 0:
        return 0
    rs = np.ascontiguousarray(np.broadcast_to(np.asarray(r, dtype=float), (S.shape[0],)))
    center = np.ascontiguousarray(center, dtype=float)
    K, base = _key_base(center, radius, pitch)
    f = _neighbourhood_keys_numba if use_numba else _neighbourhood_keys_numpy
    shift = np.ascontiguousarray(LATTICE_SHIFT[:S.shape[1]])
    uniq = np.zeros(0, dtype=np.int64)
    for s in range(0, S.shape[0], 2048):
        keys = f(S[s:s + 2048], center, float(radius), rs[s:s + 2048], float(pitch), K, base, shift)
        uniq = np.union1d(uniq, keys)
    return int(uniq.size)
