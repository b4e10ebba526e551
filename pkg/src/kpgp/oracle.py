"""Dense O(n^3) Gaussian-process reference used to check the banded path.

The log-likelihood convention matches the rest of the package:
``L = -1/2 [log det(K + s2 I) + Z^T (K + s2 I)^{-1} Z]`` (no ``2 pi`` term).
"""

import numpy as np

from .errors import InputError, NumericalError

DEFAULT_CAP = 2000
JITTERS = (0.0, 1e-12, 1e-10, 1e-8)


class DenseGram:
    """Cholesky factor of ``K(T, T) + noise_var I``.

    If the plain factorization fails, relative diagonal jitter from
    :data:`JITTERS` (times the mean diagonal of ``K``) is added until it
    succeeds; ``jitter`` records the absolute amount used.
    """

    def __init__(self, kernel, T, noise_var=0.0, cap=DEFAULT_CAP):
        T = np.asarray(T, dtype=float)
        if T.size > cap:
            raise InputError(f"dense engine refuses n = {T.size} > cap {cap}")
        self.kernel = kernel
        self.T = T
        self.noise_var = float(noise_var)
        K = kernel.gram(T)
        self.K = 0.5 * (K + K.T)
        base = self.K + self.noise_var * np.eye(T.size)
        scale = float(np.mean(np.diag(self.K))) if T.size else 1.0
        for rel in JITTERS:
            jit = rel * scale
            try:
                self.L = np.linalg.cholesky(base + jit * np.eye(T.size))
            except np.linalg.LinAlgError:
                continue
            self.jitter = jit
            break
        else:
            raise NumericalError("K + noise I is not positive definite even with jitter")

    def solve_lower(self, b):
        return np.linalg.solve(self.L, b)

    def solve(self, b):
        return np.linalg.solve(self.L.T, self.solve_lower(b))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


class DenseModel:
    """Dense-engine counterpart of a trained KP model."""

    def __init__(self, kernel, T, Z, noise_var=0.0, cap=DEFAULT_CAP, alpha=None):
        self.gram = DenseGram(kernel, T, noise_var, cap)
        self.kernel = kernel
        self.points = self.gram.T
        self.Z = np.asarray(Z, dtype=float)
        self.noise_var = float(noise_var)
        self.alpha = self.gram.solve(self.Z) if alpha is None else np.asarray(alpha, float)

    @property
    def n(self):
        return self.points.size

    def predict_mean(self, t):
        t = np.asarray(t, dtype=float)
        Ks = self.kernel.eval(np.atleast_1d(t)[:, None], self.points[None, :])
        mean = Ks @ self.alpha
        return mean[0] if t.ndim == 0 else mean

    def predict_var(self, t):
        t = np.asarray(t, dtype=float)
        q = np.atleast_1d(t)
        V = self.gram.solve_lower(self.kernel.eval(self.points[:, None], q[None, :]))
        var = np.maximum(self.kernel.eval(q, q) - np.sum(V * V, axis=0), 0.0)
        return var[0] if t.ndim == 0 else var

    def predict(self, t):
        return self.predict_mean(t), self.predict_var(t)

    def loglik(self):
        v = self.gram.solve_lower(self.Z)
        return -0.5 * (self.gram.logdet() + float(v @ v))

    def save(self, path):
        from .gp import write_model
        write_model(path, self.kernel.spec(), 0, self.noise_var, [self.points, self.Z, self.alpha])


def dense_fit_predict(kernel, T, Z, noise_var, queries, cap=DEFAULT_CAP):
    """Posterior mean and variance at ``queries`` by dense linear algebra."""
    g = DenseGram(kernel, T, noise_var, cap)
    q = np.atleast_1d(np.asarray(queries, dtype=float))
    Ks = kernel.eval(g.T[:, None], q[None, :])
    alpha = g.solve(np.asarray(Z, dtype=float))
    mean = Ks.T @ alpha
    V = g.solve_lower(Ks)
    var = kernel.eval(q, q) - np.sum(V * V, axis=0)
    return mean, var


def dense_loglik(kernel, T, Z, noise_var, cap=DEFAULT_CAP):
    g = DenseGram(kernel, T, noise_var, cap)
    Z = np.asarray(Z, dtype=float)
    v = g.solve_lower(Z)
    return -0.5 * (g.logdet() + float(v @ v))
