"""Compiled inner loops.

Every function here is plain numpy/Python code wrapped by :func:`jit`.  With
numba available the wrapper compiles it with ``numba.njit``; setting the
environment variable ``KPGP_DISABLE_NUMBA=1`` (or running without numba)
leaves the pure-numpy code in place.  The uncompiled version of a compiled
function stays reachable through its ``py_func`` attribute, which is what the
benchmark in ``benchmarks/`` compares against.

Band storage follows LAPACK: entry ``(i, j)`` of a matrix with ``kl`` lower
and ``ku`` upper diagonals lives at ``ab[ku + i - j, j]``.  Factorized
storage has ``kl`` extra leading rows for the fill produced by pivoting.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

DISABLED = os.environ.get("KPGP_DISABLE_NUMBA", "").strip() not in ("", "0")
ENABLED = numba is not None and not DISABLED


def jit(fn):
    if not ENABLED:
        fn.py_func = fn
        return fn
    return numba.njit(cache=True)(fn)


@jit
def gbtrf(ab, kl, ku, ipiv):
    """In-place banded LU with partial pivoting (LAPACK ``dgbtf2`` layout).

    ``ab`` has shape ``(2*kl + ku + 1, n)`` with the matrix in its last
    ``kl + ku + 1`` rows.  Returns ``(info, flops)`` where ``info`` is zero on
    success or one plus the first column with a zero pivot, and ``flops``
    counts multiply-adds.
    """
    n = ab.shape[1]
    kv = kl + ku
    info = 0
    flops = 0
    ju = 0
    for j in range(n):
        km = min(kl, n - 1 - j)
        jp = 0
        best = abs(ab[kv, j])
        for r in range(1, km + 1):
            v = abs(ab[kv + r, j])
            if v > best:
                best = v
                jp = r
        ipiv[j] = j + jp
        if ab[kv + jp, j] == 0.0:
            if info == 0:
                info = j + 1
            continue
        ju = max(ju, min(j + ku + jp, n - 1))
        if jp != 0:
            for c in range(j, ju + 1):
                tmp = ab[kv + j - c, c]
                ab[kv + j - c, c] = ab[kv + j + jp - c, c]
                ab[kv + j + jp - c, c] = tmp
        if km > 0:
            piv = ab[kv, j]
            for r in range(1, km + 1):
                ab[kv + r, j] /= piv
            for c in range(j + 1, ju + 1):
                u = ab[kv + j - c, c]
                if u != 0.0:
                    for r in range(1, km + 1):
                        ab[kv + r + j - c, c] -= ab[kv + r, j] * u
                    flops += km
    return info, flops


@jit
def gbtrs(ab, kl, ku, ipiv, b, trans):
    """Solve with a :func:`gbtrf` factorization, in place on ``b`` (n, k).

    ``trans`` false solves ``M x = b``, true solves ``M^T x = b``.
    """
    n = ab.shape[1]
    kv = kl + ku
    nrhs = b.shape[1]
    if not trans:
        for j in range(n - 1):
            km = min(kl, n - 1 - j)
            p = ipiv[j]
            if p != j:
                for k in range(nrhs):
                    tmp = b[p, k]
                    b[p, k] = b[j, k]
                    b[j, k] = tmp
            for r in range(1, km + 1):
                l = ab[kv + r, j]
                for k in range(nrhs):
                    b[j + r, k] -= l * b[j, k]
        for i in range(n - 1, -1, -1):
            hi = min(i + kv, n - 1)
            for k in range(nrhs):
                s = b[i, k]
                for c in range(i + 1, hi + 1):
                    s -= ab[kv + i - c, c] * b[c, k]
                b[i, k] = s / ab[kv, i]
    else:
        for i in range(n):
            lo = max(0, i - kv)
            for k in range(nrhs):
                s = b[i, k]
                for c in range(lo, i):
                    s -= ab[kv + c - i, i] * b[c, k]
                b[i, k] = s / ab[kv, i]
        for j in range(n - 2, -1, -1):
            km = min(kl, n - 1 - j)
            for k in range(nrhs):
                s = b[j, k]
                for r in range(1, km + 1):
                    s -= ab[kv + r, j] * b[j + r, k]
                b[j, k] = s
            p = ipiv[j]
            if p != j:
                for k in range(nrhs):
                    tmp = b[p, k]
                    b[p, k] = b[j, k]
                    b[j, k] = tmp
    return b


@jit
def lu_logdet(ab, kl, ku, ipiv):
    """log|det| and sign from a :func:`gbtrf` factorization."""
    n = ab.shape[1]
    kv = kl + ku
    logdet = 0.0
    sign = 1.0
    for j in range(n):
        d = ab[kv, j]
        if d == 0.0:
            return -np.inf, 0.0
        if d < 0.0:
            sign = -sign
        logdet += np.log(abs(d))
        if ipiv[j] != j:
            sign = -sign
    return logdet, sign


@jit
def block_selinv(D, U, L):
    """Blocks of the inverse of a block-tridiagonal matrix on its tridiagonal.

    ``D[j]`` are the diagonal blocks, ``U[j]`` the blocks at ``(j, j+1)`` and
    ``L[j]`` the blocks at ``(j+1, j)``.  A forward sweep forms the Schur
    complements, a backward sweep fills in the inverse blocks.  Returns the
    inverse's diagonal, upper and lower blocks, and the index of the first
    block whose Schur complement was not invertible (-1 if none).  Exactly
    singular blocks raise ``LinAlgError`` from the inversion itself.
    """
    N = D.shape[0]
    G = np.empty_like(D)
    G[0] = np.linalg.inv(D[0])
    if not np.all(np.isfinite(G[0])):
        return D, U, L, 0
    for j in range(1, N):
        S = D[j] - L[j - 1] @ (G[j - 1] @ U[j - 1])
        G[j] = np.linalg.inv(S)
        if not np.all(np.isfinite(G[j])):
            return D, U, L, j
    Md = np.empty_like(D)
    Mu = np.empty_like(U)
    Ml = np.empty_like(L)
    Md[N - 1] = G[N - 1]
    for j in range(N - 2, -1, -1):
        Mu[j] = -(G[j] @ U[j]) @ Md[j + 1]
        Ml[j] = -(Md[j + 1] @ L[j]) @ G[j]
        Md[j] = G[j] - Mu[j] @ (L[j] @ G[j])
    return Md, Mu, Ml, -1
