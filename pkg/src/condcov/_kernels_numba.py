"""numba-compiled hot kernels; same contracts as ``_kernels_numpy``.

Cached kernel matrices are observation-major, shape (n, M).  Loops run over
observations in row order with the grid as the inner (contiguous,
vectorisable) dimension, so each grid point accumulates its terms in a fixed
order regardless of how replicates are scheduled.  All kernels are ``nogil``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_EMPTY = np.empty((0, 0))


@njit(cache=True, nogil=True, inline="always")
def _k(u, h, family):
    t = u / h
    if family == 0:
        return math.exp(-0.5 * (t * t))
    v = 1.0 - t * t
    return v if v > 0.0 else 0.0


@njit(cache=True, nogil=True)
def _kernel_matrix(points, z, h, family):
    n, m = z.shape[0], points.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for g in range(m):
            out[i, g] = _k(z[i] - points[g], h, family)
    return out


def kernel_matrix(points, z, h, family):
    return _kernel_matrix(points, z, float(h), int(family))


@njit(cache=True, nogil=True)
def _local_sums(points, z, w, X, h, family, K, cached):
    m, n, p = points.shape[0], z.shape[0], X.shape[1]
    q = 3 + 2 * p
    acc = np.zeros((q, m))
    kw = np.empty(m)
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        zi = z[i]
        for g in range(m):
            kw[g] = (K[i, g] if cached else _k(zi - points[g], h, family)) * wi
        for g in range(m):
            d = zi - points[g]
            kwd = kw[g] * d
            acc[0, g] += kw[g]
            acc[1, g] += kwd
            acc[2, g] += kwd * d
        for a in range(p):
            xa = X[i, a]
            for g in range(m):
                acc[3 + a, g] += kw[g] * xa
                acc[3 + p + a, g] += kw[g] * (zi - points[g]) * xa
    return acc.T.copy()


def local_sums(points, z, w, X, h, family, K=None):
    cached = K is not None
    return _local_sums(points, z, w, X, float(h), int(family), K if cached else _EMPTY, cached)


@njit(cache=True, nogil=True)
def _outer_sums(points, z, w, R, h, family, K, cached):
    g_count, n, p = points.shape[0], z.shape[0], R.shape[1]
    q = p * (p + 1) // 2
    wsum = np.zeros(g_count)
    acc = np.zeros((q, g_count))
    kw = np.empty(g_count)
    prod = np.empty(q)
    for i in range(n):
        wi = w[i]
        if wi == 0.0:
            continue
        t = 0
        for a in range(p):
            for b in range(a, p):
                prod[t] = R[i, a] * R[i, b]
                t += 1
        zi = z[i]
        for g in range(g_count):
            kw[g] = (K[i, g] if cached else _k(zi - points[g], h, family)) * wi
            wsum[g] += kw[g]
        for t in range(q):
            pt = prod[t]
            for g in range(g_count):
                acc[t, g] += kw[g] * pt
    S = np.empty((g_count, p, p))
    t = 0
    for a in range(p):
        for b in range(a, p):
            for g in range(g_count):
                S[g, a, b] = acc[t, g]
                S[g, b, a] = acc[t, g]
            t += 1
    return wsum, S


def outer_sums(points, z, w, R, h, family, K=None):
    cached = K is not None
    return _outer_sums(points, z, w, R, float(h), int(family), K if cached else _EMPTY, cached)


@njit(cache=True, nogil=True)
def prefix_local_moments(K, z, points, X):
    n, m = K.shape
    p = X.shape[1]
    q = 3 + 2 * p
    C = np.zeros((n + 1, m, q))
    for i in range(n):
        zi = z[i]
        for g in range(m):
            k = K[i, g]
            d = zi - points[g]
            kd = k * d
            C[i + 1, g, 0] = C[i, g, 0] + k
            C[i + 1, g, 1] = C[i, g, 1] + kd
            C[i + 1, g, 2] = C[i, g, 2] + kd * d
            for a in range(p):
                C[i + 1, g, 3 + a] = C[i, g, 3 + a] + k * X[i, a]
                C[i + 1, g, 3 + p + a] = C[i, g, 3 + p + a] + kd * X[i, a]
    return C


@njit(cache=True, nogil=True)
def range_sums(C, starts, stops):
    m, q = C.shape[1], C.shape[2]
    flat = C.reshape(C.shape[0], m * q)
    out = np.zeros(m * q)
    for r in range(starts.shape[0]):
        hi = flat[stops[r]]
        lo = flat[starts[r]]
        for c in range(m * q):
            out[c] += hi[c] - lo[c]
    return out.reshape(m, q)


@njit(cache=True, nogil=True)
def block_counts(starts, stops, n):
    diff = np.zeros(n + 1, dtype=np.int64)
    for r in range(starts.shape[0]):
        diff[starts[r]] += 1
        diff[stops[r]] -= 1
    out = np.empty(n, dtype=np.int64)
    run = 0
    for i in range(n):
        run += diff[i]
        out[i] = run
    return out


@njit(cache=True, nogil=True)
def ar1_filter(eps, phi, x0):
    out = np.empty_like(eps)
    if eps.shape[0] == 0:
        return out
    out[0] = x0
    for t in range(1, eps.shape[0]):
        out[t] = phi * out[t - 1] + eps[t]
    return out
