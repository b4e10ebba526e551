"""Banded matrices and the O(n) algebra built on them.

Storage is LAPACK-style and column-addressed: entry ``(i, j)`` of an ``n x n``
matrix with ``kl`` sub- and ``ku`` super-diagonals is ``data[ku + i - j, j]``.
Positions outside the matrix in the corners of ``data`` are kept at zero.
"""

import numpy as np

from . import _jit
from .errors import (
    DegenerateBlockError,
    InputError,
    NumericalError,
    SingularMatrixError,
)


class BandedMatrix:
    """Square matrix stored by diagonals."""

    def __init__(self, data, kl, ku):
        data = np.ascontiguousarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] != kl + ku + 1:
            raise InputError(
                f"band storage must have {kl + ku + 1} rows, got {data.shape}"
            )
        self.data = data
        self.kl = int(kl)
        self.ku = int(ku)

    @property
    def n(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return (self.n, self.n)

    @classmethod
    def zeros(cls, n, kl, ku):
        return cls(np.zeros((kl + ku + 1, n)), kl, ku)

    @classmethod
    def identity(cls, n):
        return cls(np.ones((1, n)), 0, 0)

    @classmethod
    def from_dense(cls, M, kl, ku):
        """Band of a dense square matrix; entries outside it are dropped."""
        M = np.asarray(M, dtype=float)
        n = M.shape[0]
        out = cls.zeros(n, kl, ku)
        for p in range(-kl, ku + 1):
            out.set_diagonal(p, np.diagonal(M, p))
        return out

    def _diag_slice(self, p):
        n = self.n
        return self.ku - p, slice(max(0, p), n + min(0, p))

    def diagonal(self, p):
        """Entries ``M[i, i + p]`` for all valid ``i``."""
        if p < -self.kl or p > self.ku:
            return np.zeros(max(self.n - abs(p), 0))
        r, cols = self._diag_slice(p)
        return self.data[r, cols]

    def set_diagonal(self, p, values):
        r, cols = self._diag_slice(p)
        self.data[r, cols] = values

    def get(self, i, j):
        p = j - i
        if p < -self.kl or p > self.ku:
            return 0.0
        return self.data[self.ku - p, j]

    def to_dense(self):
        n = self.n
        M = np.zeros((n, n))
        for p in range(-self.kl, self.ku + 1):
            i = np.arange(max(0, -p), n - max(0, p))
            M[i, i + p] = self.diagonal(p)
        return M

    def copy(self):
        return BandedMatrix(self.data.copy(), self.kl, self.ku)

    @property
    def T(self):
        out = BandedMatrix.zeros(self.n, self.ku, self.kl)
        for p in range(-self.kl, self.ku + 1):
            out.set_diagonal(-p, self.diagonal(p))
        return out

    def widen(self, kl, ku):
        """Same matrix with (at least) the given bandwidths."""
        kl = max(kl, self.kl)
        ku = max(ku, self.ku)
        if kl == self.kl and ku == self.ku:
            return self
        out = BandedMatrix.zeros(self.n, kl, ku)
        out.data[ku - self.ku: ku + self.kl + 1] = self.data
        return out

    def __add__(self, other):
        if not isinstance(other, BandedMatrix) or other.n != self.n:
            return NotImplemented
        kl = max(self.kl, other.kl)
        ku = max(self.ku, other.ku)
        a = self.widen(kl, ku)
        b = other.widen(kl, ku)
        return BandedMatrix(a.data + b.data, kl, ku)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return BandedMatrix(self.data * float(c), self.kl, self.ku)

    __rmul__ = __mul__

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        y = np.zeros((n,) + x.shape[1:])
        for p in range(-self.kl, self.ku + 1):
            lo, hi = max(0, -p), n - max(0, p)
            d = self.diagonal(p)
            if x.ndim == 1:
                y[lo:hi] += d * x[lo + p: hi + p]
            else:
                y[lo:hi] += d[:, None] * x[lo + p: hi + p]
        return y

    def __matmul__(self, other):
        if isinstance(other, BandedMatrix):
            return band_mul(self, other)
        return self.matvec(other)

    def max_abs(self):
        return float(np.abs(self.data).max()) if self.data.size else 0.0

    def norm_inf(self):
        """Maximum absolute row sum."""
        s = np.zeros(self.n)
        for p in range(-self.kl, self.ku + 1):
            lo, hi = max(0, -p), self.n - max(0, p)
            s[lo:hi] += np.abs(self.diagonal(p))
        return float(s.max())

    def __repr__(self):
        return f"BandedMatrix(n={self.n}, kl={self.kl}, ku={self.ku})"


class BandLU:
    """Banded LU factorization with partial pivoting; reusable for solves.

    The factor keeps ``kl`` sub-diagonals of multipliers and ``kl + ku``
    super-diagonals of ``U`` (the pivoting fill).
    """

    def __init__(self, Bm):
        kl, ku = Bm.kl, Bm.ku
        ab = np.zeros((2 * kl + ku + 1, Bm.n))
        ab[kl:] = Bm.data
        ipiv = np.zeros(Bm.n, dtype=np.int64)
        info, flops = _jit.gbtrf(ab, kl, ku, ipiv)
        self.ab = ab
        self.ipiv = ipiv
        self.kl = kl
        self.ku = ku
        self.n = Bm.n
        self.info = int(info)
        self.flops = int(flops)

    @property
    def singular(self):
        return self.info > 0

    def solve(self, b, trans=False):
        """Solve ``M x = b`` (or ``M^T x = b`` with ``trans=True``)."""
        if self.singular:
            raise SingularMatrixError(
                f"zero pivot in column {self.info - 1} of banded LU"
            )
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        x = np.array(b.reshape(self.n, -1), dtype=float, order="C")
        _jit.gbtrs(self.ab, self.kl, self.ku, self.ipiv, x, bool(trans))
        return x[:, 0] if vec else x

    def logdet(self):
        """``(log|det M|, sign)``; ``(-inf, 0)`` when singular."""
        ld, sign = _jit.lu_logdet(self.ab, self.kl, self.ku, self.ipiv)
        return float(ld), float(sign)


def band_lu(Bm):
    """Factorize ``Bm``; raises :class:`SingularMatrixError` on a zero pivot."""
    lu = BandLU(Bm)
    if lu.singular:
        raise SingularMatrixError(
            f"zero pivot in column {lu.info - 1} of banded LU"
        )
    return lu


def band_logdet(Bm):
    """``(log|det|, sign)`` of a banded matrix via its LU pivots."""
    return BandLU(Bm).logdet()


def band_mul(Am, Bm):
    """Product of two banded matrices; bandwidths add.

    Each output entry is accumulated over the inner index in increasing
    order, starting from zero, which is the order a plain triple loop uses.
    """
    if Am.n != Bm.n:
        raise InputError(f"size mismatch {Am.n} vs {Bm.n}")
    n = Am.n
    kl, ku = Am.kl + Bm.kl, Am.ku + Bm.ku
    out = BandedMatrix.zeros(n, kl, ku)
    acc = {r: np.zeros(n) for r in range(-kl, ku + 1)}
    for p in range(-Am.kl, Am.ku + 1):
        a = np.zeros(n)
        a[max(0, -p): n - max(0, p)] = Am.diagonal(p)
        for q in range(-Bm.kl, Bm.ku + 1):
            # C[i, i+p+q] += A[i, i+p] * B[i+p, i+p+q]
            lo = max(0, -p, -(p + q))
            hi = min(n, n - p, n - p - q)
            if hi <= lo:
                continue
            b = Bm.diagonal(q)
            boff = max(0, -q)
            i = np.arange(lo, hi)
            acc[p + q][lo:hi] += a[lo:hi] * b[i + p - boff]
    for r, v in acc.items():
        out.set_diagonal(r, v[max(0, -r): n - max(0, r)])
    return out


class BlockBand:
    """Tridiagonal blocks of a matrix inverse, block size ``2 w``.

    ``diag[j]`` is block ``(j, j)``, ``upper[j]`` block ``(j, j+1)`` and
    ``lower[j]`` block ``(j+1, j)``.  The final block may be partial; its
    storage is padded and the padding never read.  Every entry with
    ``|i - j| <= 2 w`` is available.
    """

    def __init__(self, w, n, diag, upper, lower):
        self.w = int(w)
        self.n = int(n)
        self.diag = diag
        self.upper = upper
        self.lower = lower

    @property
    def block(self):
        return 2 * self.w

    @property
    def nblocks(self):
        return self.diag.shape[0]

    def _lookup(self, i, j):
        b = self.block
        i = np.asarray(i)
        j = np.asarray(j)
        bi, bj = i // b, j // b
        li, lj = i % b, j % b
        out = np.full(np.broadcast(i, j).shape, np.nan)
        same = bi == bj
        up = bj == bi + 1
        lo = bj == bi - 1
        out[same] = self.diag[bi[same], li[same], lj[same]]
        out[up] = self.upper[bi[up], li[up], lj[up]]
        out[lo] = self.lower[bj[lo], li[lo], lj[lo]]
        return out

    def get(self, i, j):
        v = float(self._lookup(np.array([i]), np.array([j]))[0])
        if np.isnan(v):
            raise InputError(f"entry ({i}, {j}) is outside the stored band")
        return v

    def to_banded(self, k=None):
        """The ``|i - j| <= k`` band as a :class:`BandedMatrix` (``k <= 2w``)."""
        k = self.block if k is None else int(k)
        if k > self.block:
            raise InputError(f"band {k} exceeds stored band {self.block}")
        n = self.n
        out = BandedMatrix.zeros(n, k, k)
        for p in range(-k, k + 1):
            i = np.arange(max(0, -p), n - max(0, p))
            out.set_diagonal(p, self._lookup(i, i + p))
        return out


def _to_blocks(H, b):
    """Tridiagonal blocks of a banded matrix, padded with identity."""
    n = H.n
    N = -(-n // b)
    D = np.zeros((N, b, b))
    U = np.zeros((max(N - 1, 0), b, b))
    L = np.zeros((max(N - 1, 0), b, b))
    pad = np.arange(n, N * b)
    D[pad // b, pad % b, pad % b] = 1.0
    for p in range(-H.kl, H.ku + 1):
        i = np.arange(max(0, -p), n - max(0, p))
        j = i + p
        v = H.diagonal(p)
        bi, bj = i // b, j // b
        li, lj = i % b, j % b
        same, up, lo = bi == bj, bj == bi + 1, bj == bi - 1
        D[bi[same], li[same], lj[same]] = v[same]
        U[bi[up], li[up], lj[up]] = v[up]
        L[bj[lo], li[lo], lj[lo]] = v[lo]
    return D, U, L


def _selected(H, w):
    b = 2 * w
    n = H.n
    d = np.abs(H.diagonal(0))
    scale = np.ones(n)
    ok = d > 0
    scale[ok] = 1.0 / np.sqrt(d[ok])
    Hs = H.copy()
    for p in range(-H.kl, H.ku + 1):
        lo, hi = max(0, -p), n - max(0, p)
        Hs.set_diagonal(p, H.diagonal(p) * scale[lo:hi] * scale[lo + p: hi + p])
    D, U, L = _to_blocks(Hs, b)
    try:
        Md, Mu, Ml, bad = _jit.block_selinv(D, U, L)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBlockError(f"singular Schur complement block: {exc}")
    if bad >= 0:
        raise DegenerateBlockError(f"singular Schur complement at block {bad}")
    N = D.shape[0]
    s = np.ones(N * b)
    s[:n] = scale
    s = s.reshape(N, b)
    Md = Md * s[:, :, None] * s[:, None, :]
    if N > 1:
        Mu = Mu * s[:-1, :, None] * s[1:, None, :]
        Ml = Ml * s[1:, :, None] * s[:-1, None, :]
    return BlockBand(w, n, Md, Mu, Ml)


def _dense_blocks(H, b):
    """Blocks of a banded matrix on the tridiagonal, with exact sizes."""
    n = H.n
    starts = list(range(0, n, b)) + [n]
    N = len(starts) - 1
    dense = {}

    def blk(i, j):
        if (i, j) not in dense:
            r0, r1 = starts[i], starts[i + 1]
            c0, c1 = starts[j], starts[j + 1]
            out = np.zeros((r1 - r0, c1 - c0))
            for p in range(-H.kl, H.ku + 1):
                rows = np.arange(max(r0, c0 - p, 0), min(r1, c1 - p, n))
                if rows.size:
                    out[rows - r0, rows + p - c0] = [H.get(r, r + p) for r in rows]
            dense[(i, j)] = out
        return dense[(i, j)]

    return starts, N, blk


def _solve_block(C, R, j, side):
    """Solve ``C X = R`` (side 'left') or ``X C = R`` (side 'right')."""
    if side == "right":
        return _solve_block(C.T, R.T, j, "left").T
    if C.shape[0] == C.shape[1]:
        s = np.linalg.svd(C, compute_uv=False)
        if s[-1] <= 1e-14 * s[0]:
            raise DegenerateBlockError(
                f"off-diagonal block at block index {j} is singular; the "
                "recursion needs block size equal to the bandwidth and a "
                "full outer diagonal"
            )
        return np.linalg.solve(C, R)
    X, _, rank, _ = np.linalg.lstsq(C, R, rcond=None)
    if rank < min(C.shape):
        raise DegenerateBlockError(f"rank-deficient block at block index {j}")
    return X


def _recursion(H, w):
    """Forward block recursion on the tridiagonal blocks of ``H``.

    Requires ``H`` symmetric.  Each step uses symmetry for the sub-diagonal
    block of the inverse, an auxiliary solve for the block two steps below the
    diagonal, the block-row equation for the diagonal block and the identity
    block equation for the next super-diagonal block.
    """
    b = 2 * w
    n = H.n
    starts, N, blk = _dense_blocks(H, b)
    size = [starts[j + 1] - starts[j] for j in range(N)]
    M = {}
    E = np.zeros((n, size[0]))
    E[: size[0]] = np.eye(size[0])
    X = band_lu(H).solve(E)
    M[0, 0] = X[: size[0]]
    if N > 1:
        M[1, 0] = X[starts[1]: starts[2]]
        M[0, 1] = M[1, 0].T
    with np.errstate(over="ignore", invalid="ignore"):
        _recursion_steps(M, N, size, blk)
    bad = [j for j in range(N) if not np.all(np.isfinite(M[j, j]))]
    if bad:
        raise NumericalError(
            f"block recursion overflowed at block {bad[0]} of {N}; use method='selected'"
        )
    D = np.zeros((N, b, b))
    U = np.zeros((max(N - 1, 0), b, b))
    L = np.zeros((max(N - 1, 0), b, b))
    for j in range(N):
        D[j, : size[j], : size[j]] = M[j, j]
        if j < N - 1:
            U[j, : size[j], : size[j + 1]] = M[j, j + 1]
            L[j, : size[j + 1], : size[j]] = M[j + 1, j]
    return BlockBand(w, n, D, U, L)


def _recursion_steps(M, N, size, blk):
    for j in range(1, N):
        M[j, j - 1] = M[j - 1, j].T
        if j >= 2:
            rhs = blk(j - 1, j - 2) @ M[j - 2, j - 2] + blk(j - 1, j - 1) @ M[j - 1, j - 2]
            M[j, j - 2] = -_solve_block(blk(j - 1, j), rhs, j, "left")
            R = M[j, j - 2] @ blk(j - 2, j - 1) + M[j, j - 1] @ blk(j - 1, j - 1)
        else:
            R = M[j, j - 1] @ blk(j - 1, j - 1)
        M[j, j] = -_solve_block(blk(j, j - 1), R, j, "right")
        if j < N - 1:
            R2 = np.eye(size[j]) - M[j, j - 1] @ blk(j - 1, j) - M[j, j] @ blk(j, j)
            M[j, j + 1] = _solve_block(blk(j + 1, j), R2, j, "right")


def band_of_inverse_product(P, Q, w, method="selected", sym_tol=1e-8):
    """Tridiagonal blocks of ``P^{-1} Q^{-T} = (Q^T P)^{-1}``.

    ``H = Q^T P`` must have bandwidth at most ``2 w``.  ``method="selected"``
    (default) runs a forward Schur-complement sweep and a backward sweep,
    after symmetric diagonal scaling of ``H``; it is stable whenever the
    block LU of ``H`` is, in particular for symmetric positive definite
    ``H``.  ``method="recursion"`` runs the forward-only block recursion,
    which needs ``H`` symmetric and invertible off-diagonal blocks; it loses
    roughly a constant factor of accuracy per block and is only suitable for
    a handful of blocks.
    """
    if w < 1:
        raise InputError("w must be positive")
    H = band_mul(Q.T, P)
    if max(H.kl, H.ku) > 2 * w:
        raise InputError(
            f"bandwidth {max(H.kl, H.ku)} of Q^T P exceeds block size {2 * w}"
        )
    if method == "selected":
        return _selected(H, w)
    if method == "recursion":
        asym = max_asymmetry(H)
        if asym > sym_tol:
            raise NumericalError(f"Q^T P is not symmetric (relative {asym:.2e})")
        return _recursion(H, w)
    raise InputError(f"unknown method {method!r}")


def max_asymmetry(H):
    """``max |H - H^T| / max |H|`` over the band."""
    k = max(H.kl, H.ku)
    Hw = H.widen(k, k)
    scale = max(Hw.max_abs(), np.finfo(float).tiny)
    worst = 0.0
    for p in range(1, k + 1):
        worst = max(worst, float(np.abs(Hw.diagonal(p) - Hw.diagonal(-p)).max(initial=0.0)))
    return worst / scale


def trace_inv_times(Am, Bm, method="selected"):
    """``Tr(A^{-1} B)`` from the band of ``A^{-1}`` alone."""
    if Am.n != Bm.n:
        raise InputError(f"size mismatch {Am.n} vs {Bm.n}")
    k = max(Bm.kl, Bm.ku, 1)
    w = max(k, -(-max(Am.kl, Am.ku) // 2))
    M = band_of_inverse_product(Am, BandedMatrix.identity(Am.n), w, method=method)
    Mb = M.to_banded(k)
    total = 0.0
    for p in range(-Bm.kl, Bm.ku + 1):
        # sum_i Minv[i+p, i] * B[i, i+p]
        total += float(np.dot(Mb.diagonal(-p), Bm.diagonal(p)))
    return total
