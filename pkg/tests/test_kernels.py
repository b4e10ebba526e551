import math

import numpy as np
import pytest

from kpgp.errors import DomainError, InputError, UnsupportedDerivativeError
from kpgp.kernels import IBM, Matern, Product, Sum, parse_kernel, sample_span
from kpgp.kp import null_vectors

M32 = Matern(2, 1.0, 1.0)
ALL = [
    Matern(1, 0.7, 1.3),
    Matern(2, 1.0, 1.0),
    Matern(3, 1.5, 0.5),
    IBM(1),
    IBM(2, var=2.0),
    Sum(Matern(2), IBM(1)),
    Product(Matern(2), IBM(1)),
]


def test_closed_form_values():
    assert M32.eval(0.0, 0.0) == pytest.approx(1.0)
    assert IBM(1).eval(1.0, 1.0) == pytest.approx(1 / 3)
    assert IBM(1).eval(1.0, 2.0) == pytest.approx(5 / 6)
    assert Sum(M32, IBM(1)).eval(1.0, 1.0) == pytest.approx(4 / 3)


def test_closed_form_derivatives():
    assert M32.eval_deriv(1, 2.0, 0.0) == pytest.approx(-2 * np.exp(-2.0))
    assert IBM(1).eval_deriv(1, 2.0, 1.0) == pytest.approx(0.5)
    t, s = np.array([0.3, 2.0]), np.array([1.1, 0.4])
    for k in ALL:
        np.testing.assert_array_equal(k.eval_deriv(0, t, s), k.eval(t, s))


def test_matern_orders_match_textbook_forms():
    r = np.linspace(0.0, 4.0, 9)
    np.testing.assert_allclose(Matern(1).eval(r, 0.0), np.exp(-r))
    np.testing.assert_allclose(Matern(2).eval(r, 0.0), (1 + r) * np.exp(-r))
    np.testing.assert_allclose(Matern(3).eval(r, 0.0), (1 + r + r**2 / 3) * np.exp(-r))
    k = Matern(2, ls=2.0, var=3.0)
    np.testing.assert_allclose(k.eval(r, 0.0), 3 * (1 + r / 2) * np.exp(-r / 2))


def _trapezoid(f, x):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x)))


def test_ibm_matches_integral_definition():
    rng = np.random.default_rng(1)
    for q in (1, 2):
        k = IBM(q)
        for t, s in rng.uniform(0.1, 3.0, (5, 2)):
            u = np.linspace(0.0, min(t, s), 20001)
            f = (t - u) ** q * (s - u) ** q
            ref = _trapezoid(f, u) / math.factorial(q) ** 2
            assert k.eval(t, s) == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("k", ALL, ids=str)
def test_symmetry(k):
    rng = np.random.default_rng(0)
    t, s = rng.uniform(0.05, 5.0, (2, 200))
    np.testing.assert_allclose(k.eval(t, s), k.eval(s, t), rtol=1e-13, atol=0)


@pytest.mark.parametrize("k", ALL, ids=str)
def test_derivative_consistency(k):
    rng = np.random.default_rng(3)
    h = 1e-5
    for _ in range(20):
        s = rng.uniform(0.5, 3.0)
        t = s + rng.choice([-1, 1]) * rng.uniform(0.3, 1.5)
        if t <= 0.05:
            continue
        for j in range(1, k.order_m):
            fd = (k.eval_deriv(j - 1, t + h, s) - k.eval_deriv(j - 1, t - h, s)) / (2 * h)
            exact = k.eval_deriv(j, t, s)
            assert abs(fd - exact) <= 1e-6 * max(abs(exact), 1.0)


def test_derivative_order_limit():
    with pytest.raises(UnsupportedDerivativeError):
        M32.eval_deriv(2, 1.0, 0.0)
    with pytest.raises(UnsupportedDerivativeError):
        IBM(1).eval_deriv(-1, 1.0, 0.5)


def test_diagonal_convention_is_limit_from_above():
    # the first derivative of the Matern-1/2 factor jumps across t = s
    prod = Product(Matern(1), IBM(1))
    s = 1.0
    above = prod.eval_deriv(1, s + 1e-9, s)
    below = prod.eval_deriv(1, s - 1e-9, s)
    assert abs(above - below) > 0.1
    assert prod.eval_deriv(1, s, s) == pytest.approx(above, rel=1e-6)


def test_orders():
    assert [Matern(p).order_m for p in (1, 2, 3)] == [1, 2, 3]
    assert IBM(1).order_m == 2
    assert IBM(2).order_m == 3
    assert Sum(M32, IBM(1)).order_m == 4
    assert Product(M32, IBM(1)).order_m == 3


def _span_fun(basis, t):
    return np.atleast_2d(basis.evaluate(np.asarray(t, dtype=float)))


def _same_span(F, G, tol=1e-10):
    """Rows of F and G span the same space (by rank of the stacked samples)."""
    r = np.linalg.matrix_rank
    S = np.vstack([F, G])
    s = np.linalg.svd(S, compute_uv=False)
    rank = int(np.sum(s > tol * s[0]))
    return rank == r(F, tol * np.abs(F).max()) == r(G, tol * np.abs(G).max())


def test_central_spans():
    x = np.linspace(-1.0, 1.0, 12)
    m32 = np.array([np.exp(-x), x * np.exp(-x), np.exp(x), x * np.exp(x)])
    ibm = np.array([x**0, x, x**2, x**3])
    assert M32.span_size == 4
    assert _same_span(_span_fun(M32.central_span(), x), m32)
    assert _same_span(_span_fun(IBM(1).central_span(), x), ibm)
    k = Sum(M32, IBM(1))
    assert k.span_size == 8
    assert _same_span(_span_fun(k.central_span(), x), np.vstack([ibm, m32]))


def test_product_span_is_pairwise_products():
    x = np.linspace(0.2, 2.0, 12)
    k = Product(M32, IBM(1))
    right = [np.exp(-x) * x**d for d in (0, 1, 2)]
    left = [np.exp(x) * x**d for d in (2, 3, 4)]
    assert k.span_size == 6
    assert _same_span(_span_fun(k.central_span(), x), np.array(right + left))
    # each one-sided profile of the product kernel lies in the matching span
    s_right = np.array(right)
    prof = k.eval(0.1, x)
    assert _same_span(s_right, np.vstack([s_right, prof]))


def test_span_shift_origin_invariance():
    rng = np.random.default_rng(5)
    for k in (M32, IBM(1), Matern(3, 0.5), Sum(M32, IBM(1))):
        X = np.sort(rng.uniform(1.0, 3.0, k.span_size + 1))
        a1, _ = null_vectors(sample_span(k.central_groups(), X[None], X.mean(), 1.0)[None, 0], k.order_m)
        a2, _ = null_vectors(sample_span(k.central_groups(), X[None], X[0], 1.0)[None, 0], k.order_m)
        np.testing.assert_allclose(a1, a2, atol=1e-8)


@pytest.mark.parametrize("k", [M32, IBM(1)], ids=str)
def test_span_annihilation_gap(k):
    rng = np.random.default_rng(11)
    for _ in range(25):
        X = np.sort(rng.uniform(0.1, 4.0, 5))
        G = sample_span(k.central_groups(), X[None], X.mean(), 0.5 * (X[-1] - X[0]))
        _, gap = null_vectors(G, 2)
        assert gap[0] > 1e6


@pytest.mark.parametrize("k", ALL, ids=str)
def test_gram_positive_definite(k):
    rng = np.random.default_rng(7)
    T = np.sort(rng.uniform(0.1, 5.0, 50))
    G = k.gram(T)
    assert np.linalg.eigvalsh(0.5 * (G + G.T)).min() > 0


def test_parse_round_trip():
    for k in ALL:
        assert parse_kernel(k.spec()) == k
    k = parse_kernel(" sum( matern(p=2, ls=0.5), prod(matern(p=1), ibm(q=1)) ) ")
    assert isinstance(k, Sum) and isinstance(k.right, Product)
    assert k.left.ls == 0.5


@pytest.mark.parametrize("text", [
    "", "matern(", "matern(p=4)", "rbf(ls=1)", "matern(p=2,ls=-1)", "ibm(q=0)",
    "sum(matern(p=2))", "matern(p=2) extra", "matern(p=2,foo=1)",
])
def test_parse_errors(text):
    with pytest.raises(InputError):
        parse_kernel(text)


def test_domain():
    with pytest.raises(DomainError):
        IBM(1).eval(-0.5, 1.0)
    with pytest.raises(DomainError):
        IBM(1).eval(0.0, 1.0)
    with pytest.raises(DomainError):
        M32.eval(np.nan, 1.0)
    assert M32.eval(-3.0, -2.0) == pytest.approx(2 * np.exp(-1.0))


def test_with_params():
    k = Sum(Matern(2, 1.0, 1.0), IBM(1))
    assert k.param_names == ("left.ls", "left.var", "right.var")
    k2 = k.with_params([2.0, 3.0, 0.5])
    np.testing.assert_allclose(k2.params, [2.0, 3.0, 0.5])
    assert k2.left.ls == 2.0 and k2.right.var == 0.5
