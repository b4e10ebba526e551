"""Gaussian-process regression through the KP factorization.

With ``A K(T, T) = Phi(T)`` and ``Psi = Phi(T) + s2 A = A (K + s2 I)``:

* posterior mean ``phi(t)^T C`` with ``Psi^T C = Z``;
* posterior variance ``K(t, t) - phi(t)^T H^{-1} phi(t)`` with
  ``H = A Psi^T = A (K + s2 I) A^T``, a symmetric positive definite matrix of
  bandwidth ``2m``; only the band of ``H^{-1}`` is formed;
* log-likelihood ``-1/2 [log|Psi| - log|A| + Z^T Psi^{-1} A Z]``.

``A`` holds one KP per row, so these are the transposes of the column-wise
formulas; both describe the same posterior.
"""

import math
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .banded import BandedMatrix, band_lu, band_mul, band_of_inverse_product, max_asymmetry, trace_inv_times
from .errors import InputError, NonDifferentiableError, NumericalError
from .kernels import parse_kernel
from .kp import KPFactorization, build_kp, check_points
from .oracle import DenseModel

MAGIC = b"KPGP1"
SYM_TOL = 1e-8


def _psi(fac, noise_var):
    m = fac.order_m
    return fac.phi.widen(m, m) + noise_var * fac.A


class TrainedModel:
    """A fitted model: KP factorization, noise level and solved coefficients.

    With ``var_method`` ``"selected"`` (default) or ``"recursion"`` the band
    of ``H^{-1}`` needed for variances is built on the first variance query
    and cached; a query then costs ``O(log n)``.  ``"direct"`` instead
    solves ``Psi x = phi(t)`` per query and returns
    ``K(t, t) - K(t, T) x``: ``O(n)`` per query.  The band amplifies
    rounding by about ``cond(A)^2`` when ``noise_var > 0``; the direct form
    removes most of that for Matern kernels on closely spaced designs, while
    IBM and combined kernels stay limited by ``cond(A)`` itself.
    ``"recursion"`` is the forward block recursion at block size ``2m``;
    its coupling blocks scale like ``noise_var`` so it is only usable for
    two or three blocks.
    """

    def __init__(self, fac, Z, noise_var, C=None, var_method="selected"):
        if var_method not in ("selected", "recursion", "direct"):
            raise InputError(f"unknown variance method {var_method!r}")
        self.factorization = fac
        self.kernel = fac.kernel
        self.points = fac.points
        self.Z = np.asarray(Z, dtype=float)
        self.noise_var = float(noise_var)
        self.var_method = var_method
        self.psi = _psi(fac, self.noise_var)
        self._lu = None
        self.coeffs = self.psi_lu.solve(self.Z, trans=True) if C is None else np.asarray(C, float)
        self._var_band = None
        self._band_lock = threading.Lock()
        self.H_asymmetry = None
        self.negative_variance_count = 0

    @property
    def psi_lu(self):
        if self._lu is None:
            self._lu = band_lu(self.psi)
        return self._lu

    @property
    def n(self):
        return self.points.size

    @property
    def order_m(self):
        return self.factorization.order_m

    # -- prediction ---------------------------------------------------------
    def predict_mean(self, t):
        t = np.asarray(t, dtype=float)
        lo, vals = self.factorization.evaluate_basis(np.atleast_1d(t))
        rows = lo[:, None] + np.arange(vals.shape[1])[None, :]
        mean = np.sum(vals * self.coeffs[rows], axis=1)
        return mean[0] if t.ndim == 0 else mean

    @property
    def var_band(self):
        """Band of ``H^{-1}`` with ``|i - j| <= 2m`` as a :class:`BandedMatrix`."""
        with self._band_lock:
            if self._var_band is None:
                self._var_band = self._build_var_band()
        return self._var_band

    def _build_var_band(self):
        m = self.order_m
        A = self.factorization.A
        H = band_mul(A, self.psi.T)
        self.H_asymmetry = max_asymmetry(H)
        if self.H_asymmetry > SYM_TOL:
            raise NumericalError(
                f"A Psi^T is not symmetric (relative asymmetry {self.H_asymmetry:.2e})"
            )
        method = "selected" if self.var_method == "direct" else self.var_method
        # the recursion divides by off-diagonal blocks, which are only
        # invertible when the block size 2w equals the bandwidth 2m of H
        w = m if method == "recursion" else 2 * m
        bb = band_of_inverse_product(self.psi.T, A.T, w, method=method)
        return bb.to_banded(2 * m)

    def _quad(self, lo, vals):
        M = self.var_band
        k = vals.shape[1]
        r = np.arange(k)
        i = lo[:, None, None] + r[None, :, None]
        j = lo[:, None, None] + r[None, None, :]
        Msub = M.data[M.ku + i - j, j]
        return np.einsum("qi,qij,qj->q", vals, Msub, vals)

    def _direct(self, t, lo, vals, chunk=256):
        out = np.empty(t.size)
        for a in range(0, t.size, chunk):
            b = min(a + chunk, t.size)
            rhs = np.zeros((b - a, self.n))
            rows = lo[a:b, None] + np.arange(vals.shape[1])[None, :]
            np.put_along_axis(rhs, rows, vals[a:b], axis=1)
            X = self.psi_lu.solve(rhs.T)
            Kt = self.kernel.eval(self.points[:, None], t[None, a:b])
            out[a:b] = np.sum(Kt * X, axis=0)
        return out

    def predict_var(self, t):
        t = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t)
        lo, vals = self.factorization.evaluate_basis(tt)
        prior = self.kernel.eval(tt, tt)
        if self.var_method == "direct":
            var = prior - self._direct(tt, lo, vals)
        else:
            var = prior - self._quad(lo, vals)
        neg = var < 0
        self.negative_variance_count += int(np.sum(var < -1e-8 * prior))
        var = np.where(neg, 0.0, var)
        return var[0] if t.ndim == 0 else var

    def predict(self, t):
        return self.predict_mean(t), self.predict_var(t)

    def query_cost(self, t):
        """Operation counts of one variance query, for complexity checks.

        Returns ``(comparisons, touched)``: comparisons made by the binary
        search and entries of the ``H^{-1}`` band read by the quadratic form.
        """
        T = self.points
        lo_b, hi_b = 0, T.size
        comparisons = 0
        while lo_b < hi_b:
            mid = (lo_b + hi_b) // 2
            comparisons += 1
            if t < T[mid]:
                hi_b = mid
            else:
                lo_b = mid + 1
        _, vals = self.factorization.evaluate_basis(float(t))
        nz = int(np.count_nonzero(vals))
        return comparisons, nz * nz

    # -- serialization ------------------------------------------------------
    def save(self, path):
        fac = self.factorization
        write_model(path, self.kernel.spec(), fac.order_m, self.noise_var,
                    [fac.points, self.Z, fac.coef.ravel(), self.coeffs])

    @classmethod
    def load(cls, path):
        model = load_model(path)
        if not isinstance(model, cls):
            raise InputError(f"{path}: holds a dense-engine model")
        return model


def write_model(path, spec, m, noise_var, arrays):
    """Write the ``KPGP1`` binary model format.

    Layout: magic ``KPGP1``; little-endian ``int64 n, int64 m, float64
    noise_var, int64 len(spec)``; the UTF-8 kernel spec; then float64 arrays
    ``T``, ``Z`` and, for ``m > 0``, the ``(n, 2m+1)`` KP coefficients and the
    mean coefficients ``C``.  ``m = 0`` marks a dense-engine model whose last
    array is ``(K + s2 I)^{-1} Z``.
    """
    spec = spec.encode("utf-8")
    n = arrays[0].size
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qqdq", n, m, noise_var, len(spec)))
        fh.write(spec)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path):
    """Read a ``KPGP1`` file; returns a :class:`TrainedModel` or a dense model."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise InputError(f"{path}: not a KPGP1 model file")
    off = 5
    try:
        n, m, noise_var, slen = struct.unpack_from("<qqdq", raw, off)
        off += struct.calcsize("<qqdq")
        spec = raw[off: off + slen].decode("utf-8")
        off += slen
        body = np.frombuffer(raw, dtype="<f8", offset=off)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: truncated or corrupt model file ({exc})") from None
    expect = n * 3 if m == 0 else n * (2 * m + 4)
    if n < 1 or m < 0 or body.size != expect:
        raise InputError(f"{path}: model body has {body.size} values, expected {expect}")
    kernel = parse_kernel(spec)
    T = body[:n].astype(float)
    Z = body[n: 2 * n].astype(float)
    if m == 0:
        return DenseModel(kernel, T, Z, noise_var, alpha=body[2 * n:].astype(float))
    if kernel.order_m != m:
        raise InputError(f"{path}: kernel order {kernel.order_m} does not match stored m={m}")
    coef = body[2 * n: 2 * n + n * (2 * m + 1)].reshape(n, 2 * m + 1).astype(float)
    C = body[2 * n + n * (2 * m + 1):].astype(float)
    fac = KPFactorization(kernel, T, coef, np.full(n, np.inf), "loaded")
    return TrainedModel(fac, Z, noise_var, C=C)


def _check_data(kernel, T, Z, noise_var):
    T = check_points(kernel, T)
    Z = np.asarray(Z, dtype=float)
    if Z.shape != T.shape:
        raise InputError(f"{T.size} points but {Z.size} observations")
    if not np.all(np.isfinite(Z)):
        raise InputError("observations must be finite")
    if not noise_var >= 0:
        raise InputError("noise variance must be non-negative")
    return T, Z


def fit(kernel, T, Z, noise_var=0.0, method="span", var_method="selected"):
    """Train on sorted, distinct ``T`` with observations ``Z``."""
    T, Z = _check_data(kernel, T, Z, noise_var)
    fac = build_kp(kernel, T, method)
    return TrainedModel(fac, Z, noise_var, var_method=var_method)


def _loglik_parts(fac, Z, noise_var):
    psi = _psi(fac, noise_var)
    lu = band_lu(psi)
    ld_psi, s_psi = lu.logdet()
    ld_a, s_a = band_lu(fac.A).logdet()
    if s_psi * s_a != 1.0:
        raise NumericalError(
            "det(Psi) and det(A) have different signs; K + noise I is not positive definite"
        )
    AZ = fac.A.matvec(Z)
    alpha = lu.solve(AZ)
    value = -0.5 * (ld_psi - ld_a + float(Z @ alpha))
    return value, psi, lu, alpha


def log_likelihood(kernel, T, Z, noise_var=0.0, method="span"):
    """Marginal log-likelihood ``-1/2 [log det(K + s2 I) + Z^T (K + s2 I)^{-1} Z]``."""
    T, Z = _check_data(kernel, T, Z, noise_var)
    fac = build_kp(kernel, T, method)
    return _loglik_parts(fac, Z, noise_var)[0]


def _aligned(kernel, T, base, method):
    """Factorization rescaled row by row to the base's pivot entries."""
    fac = build_kp(kernel, T, method)
    n = base.n
    piv = np.argmax(np.abs(base.coef), axis=1)
    target = base.coef[np.arange(n), piv]
    got = fac.coef[np.arange(n), piv]
    if np.any(np.abs(got) < 0.5) or np.any(np.sign(got) != np.sign(target)):
        bad = int(np.flatnonzero((np.abs(got) < 0.5) | (np.sign(got) != np.sign(target)))[0])
        raise NonDifferentiableError(f"row {bad} changed its dominant coefficient under perturbation")
    s = target / got
    coef = fac.coef * s[:, None]
    m = fac.order_m
    A = BandedMatrix.zeros(n, m, m)
    for o in range(-m, m + 1):
        rows = np.arange(max(0, -o), n - max(0, o))
        A.set_diagonal(o, coef[rows, o + m])
    phi = fac.phi.copy()
    for o in range(-(m - 1), m):
        rows = np.arange(max(0, -o), n - max(0, o))
        phi.set_diagonal(o, fac.phi.diagonal(o) * s[rows])
    return A, phi


@dataclass
class GradientTerms:
    """The four pieces of ``2 dL/dtheta_j`` for one parameter."""

    data_psi: float   # C^T dPsi alpha
    trace_psi: float  # Tr(Psi^{-1} dPsi)
    data_a: float     # C^T dA Z
    trace_a: float    # Tr(A^{-1} dA)

    @property
    def total(self):
        return self.data_psi - self.trace_psi - self.data_a + self.trace_a


def log_likelihood_grad(kernel, theta, T, Z, noise_var=0.0, include_noise=False,
                        method="span", return_terms=False):
    """Gradient of :func:`log_likelihood` in the kernel hyperparameters.

    ``theta`` follows ``kernel.param_names``; with ``include_noise`` the
    noise variance is appended as a last parameter.  The derivatives of
    ``Phi(T)`` and ``A`` come from central differences of the KP
    construction after aligning each perturbed row to the base row's
    dominant coefficient.
    """
    theta = np.asarray(theta, dtype=float)
    k = kernel.with_params(theta)
    T, Z = _check_data(k, T, Z, noise_var)
    fac = build_kp(k, T, method)
    value, psi, lu, alpha = _loglik_parts(fac, Z, noise_var)
    C = lu.solve(Z, trans=True)
    A = fac.A
    m = fac.order_m
    terms = []
    for j in range(theta.size):
        h = 1e-5 * max(abs(theta[j]), 1.0)
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h
        tm[j] -= h
        Ap, Pp = _aligned(kernel.with_params(tp), T, fac, method)
        Am, Pm = _aligned(kernel.with_params(tm), T, fac, method)
        dA = (Ap - Am) * (0.5 / h)
        dPhi = (Pp - Pm) * (0.5 / h)
        dPsi = dPhi.widen(m, m) + noise_var * dA
        terms.append(_terms(psi, A, dPsi, dA, C, alpha, Z))
    if include_noise:
        terms.append(_terms(psi, A, A, BandedMatrix.zeros(fac.n, 0, 0), C, alpha, Z))
    grad = np.array([0.5 * t.total for t in terms])
    if return_terms:
        return grad, terms
    return grad


def _terms(psi, A, dPsi, dA, C, alpha, Z):
    return GradientTerms(
        data_psi=float(C @ dPsi.matvec(alpha)),
        trace_psi=trace_inv_times(psi, dPsi),
        data_a=float(C @ dA.matvec(Z)),
        trace_a=trace_inv_times(A, dA) if dA.max_abs() > 0 else 0.0,
    )


# -- optimization -----------------------------------------------------------

@dataclass
class OptimizeResult:
    theta: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    message: str = ""
    history: list = field(default_factory=list)
    index: int = -1


def grid_search(kernel, thetas, T, Z, noise_var=0.0):
    """Evaluate the log-likelihood on candidate parameter vectors.

    Returns the first maximizer (ties go to the earlier candidate).
    """
    thetas = [np.asarray(t, dtype=float) for t in thetas]
    if not thetas:
        raise InputError("empty parameter grid")
    best, best_L, values = -1, -np.inf, []
    for i, th in enumerate(thetas):
        L = log_likelihood(kernel.with_params(th), T, Z, noise_var)
        values.append(L)
        if L > best_L:
            best, best_L = i, L
    if best < 0:
        raise NumericalError("log-likelihood is -inf on the whole grid")
    return OptimizeResult(thetas[best], best_L, True, len(thetas), "grid", values, best)


def optimize(kernel, theta0, T, Z, noise_var=0.0, max_iter=200, tol=1e-8,
             armijo=1e-4, max_halvings=40, bounds=(1e-6, 1e6)):
    """Projected gradient ascent on the log-likelihood in log-parameters.

    Steps are halved until the Armijo condition holds; after
    ``max_halvings`` failed halvings the best point so far is returned
    with ``converged=False``.  Iteration stops when the accepted step
    changes the log-likelihood by less than ``tol``.
    """
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    x = np.clip(np.log(np.asarray(theta0, dtype=float)), lo, hi)

    def value_grad(x):
        th = np.exp(x)
        L = log_likelihood(kernel.with_params(th), T, Z, noise_var)
        g = log_likelihood_grad(kernel, th, T, Z, noise_var) * th
        return L, g

    L, g = value_grad(x)
    step = 1.0
    history = [L]
    for it in range(1, max_iter + 1):
        for _ in range(max_halvings):
            x_new = np.clip(x + step * g, lo, hi)
            try:
                L_new = log_likelihood(kernel.with_params(np.exp(x_new)), T, Z, noise_var)
            except (NumericalError, InputError):
                L_new = -np.inf
            if L_new >= L + armijo * float(g @ (x_new - x)):
                break
            step *= 0.5
        else:
            return OptimizeResult(np.exp(x), L, False, it, "line search failed", history)
        dL = L_new - L
        x = x_new
        L, g = value_grad(x)
        history.append(L)
        if abs(dL) < tol:
            return OptimizeResult(np.exp(x), L, True, it, "converged", history)
        step = min(2.0 * step, 1e3)
    return OptimizeResult(np.exp(x), L, False, max_iter, "iteration limit", history)


def profile_grid(lo, hi, num):
    """Log-spaced grid helper used by the CLI."""
    return list(np.exp(np.linspace(math.log(lo), math.log(hi), num)))
