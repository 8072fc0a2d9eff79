"""Pure-numpy hot kernels (reference / fallback backend).

Kernel family codes: 0 = gaussian, 1 = epanechnikov.  Weight vectors ``w``
are row multiplicities (1 for a plain fit, bootstrap counts otherwise).
Cached kernel matrices are observation-major, shape (n, M).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import lfilter

_CHUNK_CELLS = 1 << 22


def kernel_matrix(points, z, h, family):
    t = (z[:, None] - points[None, :]) / h
    if family == 0:
        return np.exp(-0.5 * (t * t))
    return np.maximum(0.0, 1.0 - t * t)


def _chunks(m, n):
    step = max(1, _CHUNK_CELLS // max(n, 1))
    for a in range(0, m, step):
        yield a, min(m, a + step)


def local_sums(points, z, w, X, h, family, K=None):
    """Columns [S0, S1, S2, T0(p), T1(p)] per point, with d = z_i - point."""
    m, p = points.shape[0], X.shape[1]
    out = np.empty((m, 3 + 2 * p))
    for a, b in _chunks(m, z.shape[0]):
        Kc = kernel_matrix(points[a:b], z, h, family) if K is None else K[:, a:b]
        kw = Kc * w[:, None]
        d = z[:, None] - points[None, a:b]
        kwd = kw * d
        out[a:b, 0] = kw.sum(axis=0)
        out[a:b, 1] = kwd.sum(axis=0)
        out[a:b, 2] = (kwd * d).sum(axis=0)
        out[a:b, 3 : 3 + p] = kw.T @ X
        out[a:b, 3 + p :] = kwd.T @ X
    return out


def outer_sums(points, z, w, R, h, family, K=None):
    """Weight sums and sum_i K w_i r_i r_i^T per grid point (upper mirrored)."""
    g, p = points.shape[0], R.shape[1]
    iu = np.triu_indices(p)
    prod = R[:, iu[0]] * R[:, iu[1]]
    wsum = np.empty(g)
    S = np.empty((g, p, p))
    for a, b in _chunks(g, z.shape[0]):
        Kc = kernel_matrix(points[a:b], z, h, family) if K is None else K[:, a:b]
        kw = Kc * w[:, None]
        wsum[a:b] = kw.sum(axis=0)
        tri = kw.T @ prod
        S[a:b, iu[0], iu[1]] = tri
        S[a:b, iu[1], iu[0]] = tri
    return wsum, S


def prefix_local_moments(K, z, points, X):
    """Running sums over rows of K*[1, d, d^2, x, d*x]; shape (n+1, M, q)."""
    n, m = K.shape
    p = X.shape[1]
    C = np.zeros((n + 1, m, 3 + 2 * p))
    d = z[:, None] - points[None, :]
    Kd = K * d
    np.cumsum(K, axis=0, out=C[1:, :, 0])
    np.cumsum(Kd, axis=0, out=C[1:, :, 1])
    np.cumsum(Kd * d, axis=0, out=C[1:, :, 2])
    np.cumsum(K[:, :, None] * X[:, None, :], axis=0, out=C[1:, :, 3 : 3 + p])
    np.cumsum(Kd[:, :, None] * X[:, None, :], axis=0, out=C[1:, :, 3 + p :])
    return C


def range_sums(C, starts, stops):
    return (C[stops] - C[starts]).sum(axis=0)


def block_counts(starts, stops, n):
    diff = np.zeros(n + 1, dtype=np.int64)
    np.add.at(diff, starts, 1)
    np.add.at(diff, stops, -1)
    return np.cumsum(diff[:-1])


def ar1_filter(eps, phi, x0):
    """x_0 = x0, x_t = phi x_{t-1} + eps_t for t >= 1 (eps_0 is ignored)."""
    out = np.empty_like(eps)
    if eps.size == 0:
        return out
    out[0] = x0
    if eps.size > 1:
        out[1:] = lfilter([1.0], [1.0, -phi], eps[1:], zi=[phi * x0])[0]
    return out
