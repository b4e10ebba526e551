"""Shared helpers for the test suite."""

import numpy as np

from kpgp.kernels import IBM, Matern, Product, Sum

GRID20 = 1.0 + np.arange(1, 21) / 10.0

KERNELS = {
    "mat12": Matern(1, 1.0, 1.0),
    "mat32": Matern(2, 1.0, 1.0),
    "mat52": Matern(3, 1.0, 1.0),
    "ibm": IBM(1),
    "sum": Sum(Matern(2), IBM(1)),
    "prod": Product(Matern(2), IBM(1)),
}


def exterior_probes(kernel, a, b, n=100, reach=None):
    """``n`` points outside ``[a, b]``, half on each side, inside the domain."""
    reach = 2.0 * (b - a) if reach is None else reach
    left_lo = max(a - reach, kernel.lower + 1e-3 * (a - kernel.lower)) if kernel.lower > -np.inf else a - reach
    left = np.linspace(left_lo, a, n // 2, endpoint=False)
    right = np.linspace(b, b + reach, n - n // 2 + 1)[1:]
    return np.concatenate([left, right])


def support_ratio(fac, i, n_probe=100, n_inside=400):
    """max exterior |phi_i| / max interior |phi_i| by raw summation."""
    T = fac.points
    lo, hi = fac.support
    a, b = T[lo[i]], T[hi[i]]
    inside = np.linspace(a, b, n_inside)
    out = exterior_probes(fac.kernel, a, b, n_probe)
    m = fac.order_m
    n = fac.n
    if i < m:
        out = out[out > b]
    elif i >= n - m:
        out = out[out < a]
    peak = np.abs(fac.phi_dense_at(inside)[:, i]).max()
    ext = np.abs(fac.phi_dense_at(out)[:, i]).max()
    return ext / peak, peak


def rel_err(a, b):
    """max |a - b| / (1 + |b|)."""
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / (1.0 + np.abs(b))))
