"""Covariance kernels with exact SDE representations and their KP spans.

Every supported kernel has, for a fixed first argument ``t``, a second-argument
profile ``s -> K(t, s)`` that lies in a finite-dimensional span whenever ``t``
is on one side of all ``s``.  Those spans are spanned by terms
``exp(rate * s) * s**d`` and are recorded here as *groups*: a tuple of
``(rate, degrees)`` pairs.

* The *right* span covers ``t`` left of every ``s`` (KPs that vanish to the
  left of their window), the *left* span covers ``t`` right of every ``s``.
* The *central* span is their union; sampling it on ``2m + 1`` consecutive
  points gives the central KP system.

Sums take unions of constituent spans.  Products take pairwise products of
the one-sided spans (rates add, degree sets add); the union of the two
resulting one-sided spans is the central span.
"""

import re
from math import comb, factorial

import numpy as np

from .errors import DomainError, InputError, UnsupportedDerivativeError

_RATE_RTOL = 1e-12


def _falling(a, j):
    """a (a-1) ... (a-j+1); zero when j > a."""
    if j > a:
        return 0
    out = 1
    for i in range(j):
        out *= a - i
    return out


def _merge(groups):
    """Union of ``(rate, degrees)`` pairs, merging numerically equal rates."""
    out = []
    for rate, degs in groups:
        for k, (r, d) in enumerate(out):
            if abs(r - rate) <= _RATE_RTOL * max(abs(r), abs(rate)):
                out[k] = (r, d | frozenset(degs))
                break
        else:
            out.append((float(rate), frozenset(degs)))
    return tuple((r, tuple(sorted(d))) for r, d in out)


def _product(g1, g2):
    pairs = []
    for r1, d1 in g1:
        for r2, d2 in g2:
            pairs.append((r1 + r2, {a + b for a in d1 for b in d2}))
    return _merge(pairs)


def _runs(degs):
    """Split sorted degrees into maximal runs of consecutive integers."""
    runs = []
    start = prev = degs[0]
    for d in degs[1:]:
        if d != prev + 1:
            runs.append((start, prev))
            start = d
        prev = d
    runs.append((start, prev))
    return runs


def span_size(groups):
    return sum(len(d) for _, d in groups)


def sample_span(groups, X, origin, scale, normalize=True, anchor="origin"):
    """Sample span functions on points ``X`` (shape ``(..., p)``).

    ``origin`` and ``scale`` broadcast against ``X[..., 0]``.  A run of
    degrees ``d0..d1`` with rate ``r`` is represented by
    ``exp(r (x - a)) (x / c)**d0 * v**k`` with ``v = (x - a) / h`` and
    ``k = 0..d1 - d0`` (the ``(x / c)**d0`` factor is dropped when
    ``d0 = 0``).  This spans the same functions as ``exp(r x) x**d`` but is
    well conditioned on short windows far from zero.  The anchor ``a`` is the
    origin ``c``, or with ``anchor="peak"`` (``X`` sorted along its last
    axis) the window end where ``exp(r x)`` is largest, which keeps
    decaying exponentials resolved on windows much wider than ``1 / |r|``.
    With ``normalize`` each sampled function is rescaled to unit max-abs over
    the last axis, which leaves every null space unchanged.

    Returns an array of shape ``(..., span_size, p)``.
    """
    X = np.asarray(X, dtype=float)
    c = np.asarray(origin, dtype=float)[..., None]
    h = np.asarray(scale, dtype=float)[..., None]
    ref = np.where(c != 0.0, c, 1.0)
    rows = []
    for rate, degs in groups:
        a = c
        if anchor == "peak" and rate != 0.0:
            a = X[..., :1] if rate < 0 else X[..., -1:]
        v = (X - a) / h
        if rate != 0.0:
            e = rate * (X - a)
            if normalize:
                e = e - e.max(axis=-1, keepdims=True)
            ex = np.exp(e)
        else:
            ex = np.ones_like(X)
        for d0, d1 in _runs(degs):
            base = ex if d0 == 0 else ex * (X / ref) ** d0
            vk = np.ones_like(X)
            for _ in range(d1 - d0 + 1):
                rows.append(base * vk)
                vk = vk * v
    out = np.stack(rows, axis=-2)
    if normalize:
        mx = np.abs(out).max(axis=-1, keepdims=True)
        out = out / np.where(mx > 0, mx, 1.0)
    return out


class SpanBasis:
    """A fixed set of span functions with an origin shift and a scale.

    ``evaluate(t)`` returns the ``span_size`` function values at ``t`` (or a
    ``(span_size, len(t))`` array for vector input).
    """

    def __init__(self, groups, origin=0.0, scale=1.0):
        self.groups = groups
        self.shift_origin = float(origin)
        self.scale = float(scale)

    @property
    def span_size(self):
        return span_size(self.groups)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = sample_span(self.groups, t.reshape(1, -1), self.shift_origin,
                          self.scale, normalize=False)[0]
        return out[:, 0] if t.ndim == 0 else out

    def with_origin(self, origin, scale=None):
        return SpanBasis(self.groups, origin, self.scale if scale is None else scale)

    def __len__(self):
        return self.span_size

    def __repr__(self):
        return (f"SpanBasis(size={self.span_size}, origin={self.shift_origin}, "
                f"groups={self.groups})")


class Kernel:
    """Base class.  Subclasses define values, derivatives and span groups."""

    lower = -np.inf  # domain is the open interval (lower, inf)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, t, s):
        return self.eval(t, s)

    def eval(self, t, s):
        t, s = self._args(t, s)
        return self._deriv(0, t, s)

    def eval_deriv(self, j, t, s):
        """``d^j/dt^j K(t, s)`` for ``0 <= j < order_m``.

        On the diagonal ``t == s`` the value is the limit from ``t > s``.
        Matérn and IBM derivatives below order ``m`` are continuous there, so
        the limit is the two-sided value; sums and products can have orders
        above the smoothness of a constituent, and then the convention
        matters.
        """
        if not 0 <= j < self.order_m:
            raise UnsupportedDerivativeError(
                f"derivative order {j} not in [0, {self.order_m})"
            )
        t, s = self._args(t, s)
        return self._deriv(j, t, s)

    def _args(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        self.check_domain(t)
        self.check_domain(s)
        return t, s

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("time points must be finite")
        if self.lower > -np.inf and np.any(x <= self.lower):
            raise DomainError(
                f"{self.spec()} requires all time points > {self.lower}"
            )

    def gram(self, T, S=None):
        T = np.asarray(T, dtype=float)
        S = T if S is None else np.asarray(S, dtype=float)
        return self.eval(T[:, None], S[None, :])

    # -- spans --------------------------------------------------------------
    @property
    def order_m(self):
        return span_size(self.right_groups())

    @property
    def span_size(self):
        return span_size(self.central_groups())

    def central_groups(self):
        return _merge(list(self.right_groups()) + list(self.left_groups()))

    def right_span(self, origin=0.0, scale=1.0):
        return SpanBasis(self.right_groups(), origin, scale)

    def left_span(self, origin=0.0, scale=1.0):
        return SpanBasis(self.left_groups(), origin, scale)

    def central_span(self, origin=0.0, scale=1.0):
        return SpanBasis(self.central_groups(), origin, scale)

    def channels(self, t, s):
        """Sampled covariance channels for the covariance-column method.

        Returns a list of arrays; for a base kernel these are the
        derivatives ``d^k/dt^k K(t, s)``, ``k < m``.
        """
        return [self._deriv(k, t, s) for k in range(self.order_m)]

    # -- hyperparameters ----------------------------------------------------
    param_names = ()

    @property
    def params(self):
        return np.array([getattr(self, p) for p in self.param_names], dtype=float)

    def lengthscales(self):
        return []

    def __eq__(self, other):
        return isinstance(other, Kernel) and self.spec() == other.spec()

    def __hash__(self):
        return hash(self.spec())

    def __repr__(self):
        return self.spec()


class Matern(Kernel):
    """Matérn kernel with half-integer smoothness ``p - 1/2``.

    ``K(t, s) = var * P_p(r) * exp(-r)`` with ``r = |t - s| / ls`` and
    ``P_1 = 1``, ``P_2 = 1 + r``, ``P_3 = 1 + r + r**2 / 3``.
    """

    _POLYS = {1: [1.0], 2: [1.0, 1.0], 3: [1.0, 1.0, 1.0 / 3.0]}
    param_names = ("ls", "var")

    def __init__(self, p=2, ls=1.0, var=1.0):
        if p not in self._POLYS:
            raise InputError(f"Matern order p must be 1, 2 or 3, got {p}")
        if not (ls > 0 and var > 0):
            raise InputError("lengthscale and variance must be positive")
        self.p = int(p)
        self.ls = float(ls)
        self.var = float(var)
        # d^j/dr^j [P(r) e^{-r}] = P_j(r) e^{-r} with P_j = P_{j-1}' - P_{j-1}
        polys = [np.array(self._POLYS[p])]
        for _ in range(2 * p + 2):
            q = polys[-1]
            dq = np.append(q[1:] * np.arange(1, len(q)), 0.0)
            polys.append(dq - q)
        self._dpolys = polys

    def _deriv(self, j, t, s):
        d = t - s
        r = np.abs(d) / self.ls
        sign = np.where(d >= 0, 1.0, -1.0) if j % 2 else 1.0
        poly = np.polynomial.polynomial.polyval(r, self._dpolys[j])
        return self.var * sign * poly * np.exp(-r) / self.ls**j

    def right_groups(self):
        return ((-1.0 / self.ls, tuple(range(self.p))),)

    def left_groups(self):
        return ((1.0 / self.ls, tuple(range(self.p))),)

    def lengthscales(self):
        return [self.ls]

    def with_params(self, theta):
        ls, var = theta
        return Matern(self.p, ls, var)

    def spec(self):
        return f"matern(p={self.p},ls={self.ls!r},var={self.var!r})"


class IBM(Kernel):
    """Covariance of ``q``-fold integrated Brownian motion started at 0.

    ``K(t, s) = var * int_0^min(t,s) (t-u)^q (s-u)^q du / (q!)^2`` on
    ``t, s > 0``.
    """

    lower = 0.0
    param_names = ("var",)

    def __init__(self, q=1, var=1.0):
        if int(q) != q or q < 1:
            raise InputError(f"IBM order q must be a positive integer, got {q}")
        if not var > 0:
            raise InputError("variance must be positive")
        self.q = int(q)
        self.var = float(var)

    def _deriv(self, j, t, s):
        q = self.q
        t, s = np.broadcast_arrays(t, s)
        out = np.zeros(t.shape)
        ge = t >= s
        # t >= s: sum_k C(q,k) (t-s)^(q-k) s^(q+k+1) / (q+k+1)
        d = (t - s)[ge]
        sg = s[ge]
        acc = np.zeros(d.shape)
        for k in range(q + 1):
            a = q - k
            f = _falling(a, j)
            if f:
                acc += comb(q, k) * f * d ** (a - j) * sg ** (q + k + 1) / (q + k + 1)
        out[ge] = acc
        # t < s: same with the roles of t and s exchanged; Leibniz in t
        lt = ~ge
        d = (s - t)[lt]
        tl = t[lt]
        acc = np.zeros(d.shape)
        for k in range(q + 1):
            a, b = q - k, q + k + 1
            for i in range(j + 1):
                f = _falling(a, i) * _falling(b, j - i)
                if f:
                    acc += (comb(q, k) * comb(j, i) * (-1) ** i * f
                            * d ** (a - i) * tl ** (b - j + i) / (q + k + 1))
        out[lt] = acc
        return self.var * out / factorial(q) ** 2

    def right_groups(self):
        return ((0.0, tuple(range(self.q + 1))),)

    def left_groups(self):
        return ((0.0, tuple(range(self.q + 1, 2 * self.q + 2))),)

    def with_params(self, theta):
        (var,) = theta
        return IBM(self.q, var)

    def spec(self):
        if self.var == 1.0:
            return f"ibm(q={self.q})"
        return f"ibm(q={self.q},var={self.var!r})"


class _Combined(Kernel):
    def __init__(self, left, right):
        if not (isinstance(left, Kernel) and isinstance(right, Kernel)):
            raise InputError("constituents must be kernels")
        self.left = left
        self.right = right
        self.lower = max(left.lower, right.lower)
        r, l = self.right_groups(), self.left_groups()
        if span_size(r) != span_size(l):
            raise InputError(
                f"{self.spec()}: one-sided spans have different sizes "
                f"({span_size(r)} and {span_size(l)}); no symmetric KP system"
            )
        if self.span_size != 2 * self.order_m:
            raise InputError(f"{self.spec()}: central span is not minimal")
        _check_independent(self)

    @property
    def param_names(self):
        return tuple(f"left.{p}" for p in self.left.param_names) + tuple(
            f"right.{p}" for p in self.right.param_names
        )

    @property
    def params(self):
        return np.concatenate([self.left.params, self.right.params])

    def with_params(self, theta):
        k = len(self.left.params)
        return type(self)(self.left.with_params(theta[:k]),
                          self.right.with_params(theta[k:]))

    def lengthscales(self):
        return self.left.lengthscales() + self.right.lengthscales()


class Sum(_Combined):
    """``K1 + K2``; spans are unions of the constituent spans."""

    def _deriv(self, j, t, s):
        return self.left._deriv(j, t, s) + self.right._deriv(j, t, s)

    def right_groups(self):
        return _merge(list(self.left.right_groups()) + list(self.right.right_groups()))

    def left_groups(self):
        return _merge(list(self.left.left_groups()) + list(self.right.left_groups()))

    def channels(self, t, s):
        return self.left.channels(t, s) + self.right.channels(t, s)

    def spec(self):
        return f"sum({self.left.spec()},{self.right.spec()})"


class Product(_Combined):
    """``K1 * K2``; one-sided spans are pairwise products of constituents'."""

    def _deriv(self, j, t, s):
        out = 0.0
        for i in range(j + 1):
            out = out + comb(j, i) * self.left._deriv(i, t, s) * self.right._deriv(j - i, t, s)
        return out

    def right_groups(self):
        return _product(self.left.right_groups(), self.right.right_groups())

    def left_groups(self):
        return _product(self.left.left_groups(), self.right.left_groups())

    def channels(self, t, s):
        return [a * b for a in self.left.channels(t, s) for b in self.right.channels(t, s)]

    def spec(self):
        return f"prod({self.left.spec()},{self.right.spec()})"


def _check_independent(k, tol=1e-10):
    """Confirm the central span has full numerical rank on probe points."""
    size = k.span_size
    h = max(k.lengthscales() + [1.0])
    c = 3.0 * h
    x = np.linspace(c - h, c + h, size + 3)
    S = sample_span(k.central_groups(), x[None, :], c, h)[0]
    sv = np.linalg.svd(S, compute_uv=False)
    if sv[-1] < tol * sv[0]:
        raise InputError(f"{k.spec()}: central span functions are linearly dependent")


# -- spec strings -----------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z_0-9]*)|([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(.))")


def _tokenize(text):
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        name, num, sym = m.groups()
        if name is not None:
            toks.append(("name", name))
        elif num is not None:
            toks.append(("num", num))
        elif sym is not None and not sym.isspace():
            toks.append(("sym", sym))
        pos = m.end()
    return toks


def parse_kernel(text):
    """Parse ``matern(p=2,ls=1.0,var=1.0)``, ``ibm(q=1)``, ``sum(A,B)``, ``prod(A,B)``."""
    toks = _tokenize(text)
    pos = [0]

    def peek():
        return toks[pos[0]] if pos[0] < len(toks) else (None, None)

    def take(kind=None, value=None):
        tok = peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind or "token"
            raise InputError(f"kernel spec {text!r}: expected {want} at token {pos[0]}")
        pos[0] += 1
        return tok[1]

    def kernel():
        name = take("name").lower()
        take("sym", "(")
        if name in ("sum", "prod", "product"):
            a = kernel()
            take("sym", ",")
            b = kernel()
            take("sym", ")")
            return Sum(a, b) if name == "sum" else Product(a, b)
        kwargs = {}
        while peek() != ("sym", ")"):
            key = take("name")
            take("sym", "=")
            kwargs[key] = float(take("num"))
            if peek() == ("sym", ","):
                take()
        take("sym", ")")
        try:
            if name == "matern":
                if "p" in kwargs:
                    kwargs["p"] = int(kwargs["p"])
                return Matern(**kwargs)
            if name == "ibm":
                if "q" in kwargs:
                    kwargs["q"] = int(kwargs["q"])
                return IBM(**kwargs)
        except TypeError as exc:
            raise InputError(f"kernel spec {text!r}: {exc}") from None
        raise InputError(f"kernel spec {text!r}: unknown family {name!r}")

    k = kernel()
    if pos[0] != len(toks):
        raise InputError(f"kernel spec {text!r}: trailing input")
    return k
