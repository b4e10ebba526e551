"""Kernel packets of additive and product kernels on scattered points.

For ``K(t, t') = sum_d K_d(t_d, t'_d)`` the KP system stacks, for every
point, the central spans of all dimensions (``2 m_d`` rows each) and needs
``1 + sum_d 2 m_d`` points.  For ``K = prod_d K_d`` the system uses the
Kronecker product of the per-dimension central spans and ``(2m)^D + 1``
points.  Either way the resulting combination ``sum_i a_i K(t, t_i)``
vanishes on ``U``: every coordinate strictly below the smallest or above the
largest design coordinate of its axis.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, InputError
from .kernels import Kernel, sample_span
from .kp import GAP_MIN

_EPS = np.finfo(float).eps
MARGIN = 1e-12
BOX_WIDTH = 5.0


@dataclass(frozen=True)
class ScatteredKP:
    """A multi-dimensional KP.

    ``coeffs`` are max-abs normalized with the largest entry positive;
    ``vanish_region[d] = (lo_d, hi_d)`` are the coordinate extrema of axis
    ``d``, so ``U = prod_d ((-inf, lo_d) u (hi_d, inf))``.
    """

    structure: str
    kernels: tuple
    points: np.ndarray
    coeffs: np.ndarray
    vanish_region: tuple
    gap: float

    @property
    def dim(self):
        return self.points.shape[1]

    def kernel_matrix(self, t):
        """``K(t_q, t_i)`` for query rows ``t`` (shape ``(q, D)``)."""
        t = np.atleast_2d(np.asarray(t, dtype=float))
        if t.shape[1] != self.dim:
            raise InputError(f"queries have {t.shape[1]} coordinates, expected {self.dim}")
        out = None
        for d, k in enumerate(self.kernels):
            Kd = k.eval(t[:, d:d + 1], self.points[None, :, d])
            if out is None:
                out = Kd
            elif self.structure == "additive":
                out = out + Kd
            else:
                out = out * Kd
        return out

    def __call__(self, t):
        return self.kernel_matrix(t) @ self.coeffs


def _check(kernels, points, structure):
    kernels = tuple(kernels)
    if not kernels or not all(isinstance(k, Kernel) for k in kernels):
        raise InputError("need one kernel per dimension")
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != len(kernels):
        raise InputError(f"points must have shape (s, {len(kernels)})")
    if not np.all(np.isfinite(P)):
        raise InputError("points must be finite")
    for d, k in enumerate(kernels):
        k.check_domain(P[:, d])
    if structure == "additive":
        need = 1 + sum(2 * k.order_m for k in kernels)
    else:
        ms = {k.order_m for k in kernels}
        if len(ms) != 1:
            raise InputError(f"product KPs need equal order m in every dimension, got {sorted(ms)}")
        need = (2 * ms.pop()) ** len(kernels) + 1
    if P.shape[0] != need:
        raise InputError(f"{structure} KP in {len(kernels)}-d needs {need} points, got {P.shape[0]}")
    _, inv, counts = np.unique(P, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts > 1):
        dup = np.flatnonzero(counts[np.ravel(inv)] > 1)
        raise InputError(f"duplicate points at rows {dup.tolist()}")
    return kernels, P


def _axis_spans(kernels, P):
    spans = []
    for d, k in enumerate(kernels):
        x = P[:, d]
        lo, hi = x.min(), x.max()
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo) if hi > lo else 1.0
        spans.append(sample_span(k.central_groups(), x[None, :], c, h)[0])
    return spans


def _solve(H, structure):
    _, s, Vh = np.linalg.svd(np.vstack([H, np.zeros((H.shape[1] - H.shape[0], H.shape[1]))])
                             if H.shape[0] < H.shape[1] else H)
    gap = s[-2] / max(s[-1], _EPS * s[0])
    if not gap > GAP_MIN:
        raise DegenerateConfigurationError(
            f"{structure} KP system has no one-dimensional null space (singular gap {gap:.3g})"
        )
    a = Vh[-1].copy()
    a /= np.abs(a).max()
    if a[np.argmax(np.abs(a))] < 0:
        a = -a
    return a, float(gap)


def _build(kernels, points, structure):
    kernels, P = _check(kernels, points, structure)
    spans = _axis_spans(kernels, P)
    if structure == "additive":
        H = np.vstack(spans)
    else:
        H = spans[0]
        for S in spans[1:]:
            H = (H[:, None, :] * S[None, :, :]).reshape(-1, H.shape[1])
    a, gap = _solve(H, structure)
    region = tuple((float(P[:, d].min()), float(P[:, d].max())) for d in range(P.shape[1]))
    return ScatteredKP(structure, kernels, P, a, region, gap)


def additive_kp(kernels, points):
    """KP of ``sum_d K_d(t_d, .)`` on ``1 + sum_d 2 m_d`` scattered points."""
    return _build(kernels, points, "additive")


def product_kp(kernels, points):
    """KP of ``prod_d K_d(t_d, .)`` on ``(2m)^D + 1`` scattered points."""
    return _build(kernels, points, "product")


def sample_region(region, n_samples, rng, width=BOX_WIDTH, margin=MARGIN):
    """Uniform samples of ``U`` cut to a box extending ``width`` past each axis range.

    Points within ``margin`` of a boundary are excluded because ``U`` is open.
    """
    out = np.empty((n_samples, len(region)))
    for d, (lo, hi) in enumerate(region):
        side = rng.random(n_samples) < 0.5
        u = rng.uniform(margin, width, n_samples)
        out[:, d] = np.where(side, lo - u, hi + u)
    return out


def probe_scale(kp, n_per_axis=21):
    """Largest ``|KP|`` on a grid over the bounding box of the points."""
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in kp.vanish_region]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, kp.dim)
    return float(np.abs(kp(grid)).max())


def verify_vanish(kp, n_samples=200, seed=0, samples=None):
    """Largest ``|KP|`` over samples of ``U``, relative to :func:`probe_scale`.

    ``samples`` overrides the random draw (rows of ``D`` coordinates).
    """
    if not np.any(kp.coeffs):
        raise InputError("KP has an all-zero coefficient vector")
    if samples is None:
        samples = sample_region(kp.vanish_region, n_samples, np.random.default_rng(seed))
    scale = probe_scale(kp)
    if scale == 0.0:
        raise InputError("KP vanishes on its whole bounding box")
    return float(np.abs(kp(samples)).max()) / scale


def centroid_value(kp):
    """``|KP|`` at the centre of the bounding box, relative to :func:`probe_scale`."""
    c = np.array([[0.5 * (lo + hi) for lo, hi in kp.vanish_region]])
    return float(abs(kp(c)[0])) / probe_scale(kp)
