"""Eigenvalues of small dense nonsymmetric matrices.

Balancing, Householder reduction to upper Hessenberg form, then the
Francis implicit double-shift QR iteration with deflation.  Sized for the
6x6 matrices of the trust-region eigenproblem, which are solved thousands
of times per estimate, so the kernels are compiled with numba.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

_EPS = float(np.finfo(np.float64).eps)


class LargestReal(NamedTuple):
    value: float | None  # None when the spectrum has no real eigenvalue
    converged: bool
    sweeps: int


@njit(cache=True)
def _balance(a):
    # Parlett-Reinsch: scale rows/columns by powers of two until their norms match
    n = a.shape[0]
    radix = 2.0
    sqrdx = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            c = 0.0
            r = 0.0
            for j in range(n):
                if j != i:
                    c += abs(a[j, i])
                    r += abs(a[i, j])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                for j in range(n):
                    a[i, j] /= f
                    a[j, i] *= f


@njit(cache=True)
def _hessenberg(h):
    n = h.shape[0]
    w = np.empty(n)
    for k in range(n - 2):
        # reflector built from the column scaled to unit max, so squares cannot underflow
        colmax = 0.0
        for i in range(k + 1, n):
            colmax = max(colmax, abs(h[i, k]))
        if colmax == 0.0:
            continue
        alpha = 0.0
        for i in range(k + 1, n):
            w[i] = h[i, k] / colmax
            alpha += w[i] * w[i]
        alpha = math.sqrt(alpha)
        if w[k + 1] > 0.0:
            alpha = -alpha
        vnorm = 0.0
        w[k + 1] -= alpha
        for i in range(k + 1, n):
            vnorm += w[i] * w[i]
        vnorm = math.sqrt(vnorm)
        if vnorm == 0.0:
            continue
        for i in range(k + 1, n):
            w[i] /= vnorm
        # H <- P H with P = I - 2 w w^T acting on rows k+1..n-1
        for j in range(k, n):
            s = 0.0
            for i in range(k + 1, n):
                s += w[i] * h[i, j]
            for i in range(k + 1, n):
                h[i, j] -= 2.0 * w[i] * s
        # H <- H P on columns k+1..n-1
        for i in range(n):
            s = 0.0
            for j in range(k + 1, n):
                s += h[i, j] * w[j]
            for j in range(k + 1, n):
                h[i, j] -= 2.0 * s * w[j]
        for i in range(k + 2, n):
            h[i, k] = 0.0


@njit(cache=True)
def _hqr(a, wr, wi, max_sweeps):
    # Francis double-shift QR on an upper Hessenberg matrix, overwritten in place.
    # Returns (converged, sweeps); unfound eigenvalues keep their NaN marker.
    n = a.shape[0]
    eps = 2.220446049250313e-16
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    nn = n - 1
    t = 0.0
    sweeps = 0
    x = y = z = w = p = q = r = s = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l > 0:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= eps * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = x + z
                    wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = 0.0
                    wi[nn] = 0.0
                else:
                    wr[nn - 1] = x + p
                    wr[nn] = x + p
                    wi[nn - 1] = z
                    wi[nn] = -z
                nn -= 2
                break
            if sweeps >= max_sweeps:
                return False, sweeps
            if its == 10 or its == 20:
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = 0.75 * s
                y = x
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            # look for two consecutive small subdiagonal elements
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= eps * v:
                    break
                m -= 1
            for i in range(m, nn - 1):
                a[i + 2, i] = 0.0
                if i != m:
                    a[i + 2, i - 1] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = 0.0
                    if k + 1 != nn:
                        r = a[k + 2, k - 1]
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k + 1 != nn:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = min(nn, k + 3)
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k + 1 != nn:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return True, sweeps


def _checked(matrix):
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def balance(matrix) -> np.ndarray:
    """Similar matrix with row and column norms equilibrated by powers of two."""
    a = _checked(matrix)
    _balance(a)
    return a


def hessenberg(matrix) -> np.ndarray:
    """Upper Hessenberg matrix orthogonally similar to ``matrix``."""
    h = _checked(matrix)
    _hessenberg(h)
    return h


def _spectrum(matrix, max_sweeps):
    a = _checked(matrix)
    n = a.shape[0]
    wr = np.full(n, np.nan)
    wi = np.full(n, np.nan)
    if n == 1:
        wr[0], wi[0] = a[0, 0], 0.0
        return wr, wi, True, 0
    # work at unit scale so that products in the QR sweeps cannot underflow
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return np.zeros(n), np.zeros(n), True, 0
    a /= scale
    _balance(a)
    _hessenberg(a)
    ok, sweeps = _hqr(a, wr, wi, max_sweeps)
    return wr * scale, wi * scale, ok, sweeps


def eigenvalues(matrix, max_sweeps=500):
    """Complex eigenvalues of a real square matrix and a convergence flag.

    Eigenvalues not isolated before ``max_sweeps`` QR sweeps are NaN.
    """
    wr, wi, ok, _ = _spectrum(matrix, max_sweeps)
    return wr + 1j * wi, ok


def eigen_largest_real(matrix, max_sweeps=500) -> LargestReal:
    """Largest real eigenvalue of a small real matrix.

    Non-convergence is reported through the ``converged`` flag, never raised.
    ``value`` is None when every eigenvalue found belongs to a complex pair.
    """
    wr, wi, ok, sweeps = _spectrum(matrix, max_sweeps)
    real = wr[(wi == 0.0) & np.isfinite(wr)]
    value = float(real.max()) if real.size else None
    return LargestReal(value, bool(ok), int(sweeps))
