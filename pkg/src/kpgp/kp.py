"""Kernel-packet factorization of a one-dimensional design.

Row ``i`` of the transformation matrix ``A`` holds coefficients ``a`` with
``phi_i(t) = sum_j a_j K(t, t_j)`` supported on a window of consecutive
design points (0-based indices):

* ``i < m``: window ``i .. i+m``, left-sided, ``phi_i = 0`` for ``t >= t_{i+m}``;
* ``m <= i < n-m``: window ``i-m .. i+m``, zero outside ``(t_{i-m}, t_{i+m})``;
* ``i >= n-m``: window ``i-m .. i``, right-sided, ``phi_i = 0`` for ``t <= t_{i-m}``.

Coefficients are stored as an ``(n, 2m+1)`` array aligned on offsets
``-m .. m`` from the row index.
"""

import numpy as np

from .banded import BandedMatrix
from .errors import DegenerateWindowError, InputError
from .kernels import sample_span

GAP_MIN = 1e6
_EPS = np.finfo(float).eps


def check_points(kernel, points):
    T = np.asarray(points, dtype=float)
    if T.ndim != 1:
        raise InputError("design points must be a 1-d array")
    m = kernel.order_m
    if T.size <= 2 * m + 1:
        raise InputError(
            f"need more than 2m+1 = {2 * m + 1} points for {kernel.spec()}, got {T.size}"
        )
    kernel.check_domain(T)
    d = np.diff(T)
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0])
        what = "duplicate" if d[bad] == 0 else "unsorted"
        raise InputError(f"{what} design points at indices {bad} and {bad + 1}")
    return T


def null_vectors(G, center):
    """Smallest right singular vectors of a batch of systems ``G`` (B, r, c).

    Returns ``(a, gap)``: coefficient vectors max-abs normalized with
    ``a[:, center] > 0`` and the ratio of the second-smallest to the
    smallest singular value of each (zero-padded, square or tall) system.
    The smallest value is floored at ``eps * s_max``: an exact null vector
    makes it roundoff noise, so the gap measures how far the next direction
    sits above that floor.
    """
    B, r, c = G.shape
    if r < c:
        G = np.concatenate([G, np.zeros((B, c - r, c))], axis=1)
    _, s, Vh = np.linalg.svd(G)
    a = Vh[:, -1, :].copy()
    gap = s[:, -2] / np.maximum(s[:, -1], _EPS * s[:, 0])
    a /= np.abs(a).max(axis=1, keepdims=True)
    a *= np.where(a[:, center] < 0, -1.0, 1.0)[:, None]
    return a, gap


def _normalize_rows(G):
    mx = np.abs(G).max(axis=-1, keepdims=True)
    return G / np.where(mx > 0, mx, 1.0)


def _window_points(T, rows, lo, size):
    idx = rows[:, None] + lo + np.arange(size)[None, :]
    return T[idx]


def _span_system(kernel, X, kind):
    c = 0.5 * (X[:, 0] + X[:, -1])
    h = 0.5 * (X[:, -1] - X[:, 0])
    groups = {
        "central": kernel.central_groups,
        "left": kernel.left_groups,
        "right": kernel.right_groups,
    }[kind]()
    return sample_span(groups, X, c, h, anchor="peak")


def _covariance_system(kernel, X, kind):
    blocks = []
    if kind in ("central", "right"):
        blocks += kernel.channels(X[:, :1], X)
    if kind in ("central", "left"):
        blocks += kernel.channels(X[:, -1:], X)
    return _normalize_rows(np.stack(blocks, axis=1))


def _solve_rows(kernel, T, method):
    n = T.size
    m = kernel.order_m
    coef = np.zeros((n, 2 * m + 1))
    gaps = np.empty(n)
    system = {"span": _span_system, "covariance": _covariance_system}[method]
    parts = [
        ("left", np.arange(0, m), 0, m + 1, 0),
        ("central", np.arange(m, n - m), -m, 2 * m + 1, m),
        ("right", np.arange(n - m, n), -m, m + 1, m),
    ]
    for kind, rows, lo, size, center in parts:
        if rows.size == 0:
            continue
        X = _window_points(T, rows, lo, size)
        a, gap = null_vectors(system(kernel, X, kind), center)
        coef[rows, lo + m: lo + m + size] = a
        gaps[rows] = gap
    bad = np.flatnonzero(~(gaps > GAP_MIN))
    if bad.size:
        i = int(bad[0])
        w0, w1 = max(i - m, 0), min(i + m, n - 1)
        raise DegenerateWindowError(
            f"window of row {i} (points {w0}..{w1}, t in [{T[w0]:.6g}, {T[w1]:.6g}]) "
            f"has no one-dimensional null space (singular gap {gaps[i]:.3g} < {GAP_MIN:g})"
        )
    return coef, gaps


def _phi_band(kernel, T, coef):
    """Evaluate ``Phi(T)`` on offsets ``-m .. m`` from the diagonal.

    Returns the in-band diagonals (offsets ``|o| < m``) and the largest
    off-band magnitude, absolute and relative to the row's cancellation scale
    ``sum_j |a_j K(t, t_j)|``.
    """
    n = T.size
    m = (coef.shape[1] - 1) // 2
    pad = np.concatenate([np.full(2 * m, T[0]), T, np.full(2 * m, T[-1])])
    rows = np.arange(n)
    pts = pad[rows[:, None] + np.arange(-m, m + 1)[None, :] + 2 * m]
    diags = {}
    off_abs = 0.0
    off_rel = 0.0
    for o in range(-m, m + 1):
        valid = (rows + o >= 0) & (rows + o < n)
        tj = pad[rows + o + 2 * m]
        Kv = kernel.eval(tj[:, None], pts)
        terms = coef * Kv
        val = terms.sum(axis=1)
        if abs(o) < m:
            diags[o] = val[valid]
        else:
            scale = np.abs(terms).sum(axis=1)
            v = np.abs(val[valid])
            if v.size:
                off_abs = max(off_abs, float(v.max()))
                off_rel = max(off_rel, float((v / np.maximum(scale[valid], 1e-300)).max()))
    return diags, off_abs, off_rel


class KPFactorization:
    """Transformation matrix, KP basis and Gram band for a sorted design.

    Attributes
    ----------
    points : ndarray
        Sorted design points ``T``.
    kernel : Kernel
    order_m : int
    coef : ndarray, shape (n, 2m+1)
        ``coef[i, o + m] = A[i, i + o]``.
    gaps : ndarray
        Singular-value gap of every window system.
    phi : BandedMatrix
        ``Phi(T)`` with bandwidth ``m - 1`` (entries outside are structural zeros).
    offband_abs, offband_rel : float
        Largest ``|Phi(T)[i, j]|`` with ``|i - j| = m`` before clamping,
        absolute and relative to the row's cancellation scale.
    """

    def __init__(self, kernel, points, coef, gaps, method):
        self.kernel = kernel
        self.points = points
        self.order_m = kernel.order_m
        self.coef = coef
        self.gaps = gaps
        self.method = method
        diags, self.offband_abs, self.offband_rel = _phi_band(kernel, points, coef)
        m = self.order_m
        self.phi = BandedMatrix.zeros(self.n, m - 1, m - 1)
        for o, v in diags.items():
            self.phi.set_diagonal(o, v)
        self._A = None

    @property
    def n(self):
        return self.points.size

    @property
    def A(self):
        if self._A is None:
            m = self.order_m
            A = BandedMatrix.zeros(self.n, m, m)
            for o in range(-m, m + 1):
                rows = np.arange(max(0, -o), self.n - max(0, o))
                A.set_diagonal(o, self.coef[rows, o + m])
            self._A = A
        return self._A

    @property
    def support(self):
        """Per-row closed index window ``(lo_i, hi_i)`` (0-based)."""
        i = np.arange(self.n)
        m = self.order_m
        return np.maximum(i - m, 0), np.minimum(i + m, self.n - 1)

    def window_start(self, t):
        """First row index of the ``2m`` rows that can be non-zero at ``t``."""
        t = np.asarray(t, dtype=float)
        m = self.order_m
        k = np.searchsorted(self.points, t, side="right") - 1
        return np.clip(k + 1 - m, 0, self.n - 2 * m), k

    def evaluate_basis(self, t):
        """Values of the basis functions that can be non-zero at ``t``.

        Returns ``(lo, values)``: ``values[..., r]`` is ``phi_{lo + r}(t)`` for
        ``r < 2m``.  Rows whose support does not contain ``t`` (including rows
        with ``t`` on a window endpoint) are exactly zero.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        self.kernel.check_domain(t)
        T = self.points
        n, m = self.n, self.order_m
        lo, k = self.window_start(t)
        rows = lo[:, None] + np.arange(2 * m)[None, :]
        cols = rows[:, :, None] + np.arange(-m, m + 1)[None, None, :]
        Kv = self.kernel.eval(t[:, None, None], T[np.clip(cols, 0, n - 1)])
        vals = (self.coef[rows] * Kv).sum(axis=2)
        # non-zero rows at t in (t_k, t_{k+1}) are k+1-m .. k+m; at t == t_k
        # the row starting at t_k vanishes as well
        on_point = (k >= 0) & (T[np.maximum(k, 0)] == t)
        hi = k + m - on_point.astype(int)
        keep = (rows >= (k + 1 - m)[:, None]) & (rows <= hi[:, None])
        vals = np.where(keep, vals, 0.0)
        if scalar:
            return int(lo[0]), vals[0]
        return lo, vals

    def basis_matrix(self, t):
        """Dense ``(len(t), n)`` matrix of all basis values (for plots/tests)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo, vals = self.evaluate_basis(t)
        out = np.zeros((t.size, self.n))
        rows = lo[:, None] + np.arange(vals.shape[1])[None, :]
        np.put_along_axis(out, rows, vals, axis=1)
        return out

    def phi_dense_at(self, t):
        """All ``phi_i(t)`` by direct summation, without support bookkeeping."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n, m = self.n, self.order_m
        cols = np.arange(n)[:, None] + np.arange(-m, m + 1)[None, :]
        Kv = self.kernel.eval(t[:, None, None], self.points[np.clip(cols, 0, n - 1)][None])
        return (self.coef[None] * Kv).sum(axis=2)


def build_kp(kernel, points, method="span"):
    """Build the KP factorization with the span (default) or covariance method."""
    T = check_points(kernel, points)
    coef, gaps = _solve_rows(kernel, T, method)
    return KPFactorization(kernel, T, coef, gaps, method)


def build_kp_span(kernel, points):
    """KP rows from samples of the kernel's analytic spans."""
    return build_kp(kernel, points, "span")


def build_kp_covariance_columns(kernel, points):
    """KP rows from kernel derivatives at the window boundaries.

    For a boundary ``b`` the conditions are ``sum_j a_j d^k/dt^k K(b, t_j) = 0``
    over the kernel's covariance channels (derivatives ``k < m`` for a base
    kernel, unions for sums, pairwise products for products).
    """
    return build_kp(kernel, points, "covariance")
