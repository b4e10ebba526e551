"""Compiled versus pure-Python inner loops.

Times each function in ``kpgp._jit`` through numba and through its
``py_func`` on the same inputs, checks the results agree, and prints one
row per function.  Run with ``python3 benchmarks/bench_jit.py [n]``.
"""

import sys
import time

import numpy as np

from kpgp import _jit


def best_of(fn, make_args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        args = make_args()
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out, args


def banded_system(n, kl, ku, rng):
    ab = np.zeros((2 * kl + ku + 1, n))
    ab[kl:] = rng.standard_normal((kl + ku + 1, n))
    ab[kl + ku] += 4.0 * (kl + ku + 1)
    return ab


def block_system(N, b, rng):
    D = rng.standard_normal((N, b, b)) + 4.0 * b * np.eye(b)
    U = rng.standard_normal((N - 1, b, b))
    L = rng.standard_normal((N - 1, b, b))
    return D, U, L


def main(n=20000):
    if not _jit.ENABLED:
        print("numba disabled (KPGP_DISABLE_NUMBA set or numba missing); nothing to compare")
        return
    rng = np.random.default_rng(0)
    kl = ku = 4
    ab0 = banded_system(n, kl, ku, rng)
    b0 = rng.standard_normal((n, 1))
    piv = np.zeros(n, dtype=np.int64)
    ab_f = ab0.copy()
    _jit.gbtrf(ab_f, kl, ku, piv)
    N, bs = n // 8, 8
    D, U, L = block_system(N, bs, rng)

    cases = [
        ("gbtrf", _jit.gbtrf,
         lambda: (ab0.copy(), kl, ku, np.zeros(n, dtype=np.int64)), lambda out, args: args[0]),
        ("gbtrs", _jit.gbtrs,
         lambda: (ab_f, kl, ku, piv, b0.copy(), False), lambda out, args: args[4]),
        ("lu_logdet", _jit.lu_logdet,
         lambda: (ab_f, kl, ku, piv), lambda out, args: np.array(out)),
        ("block_selinv", _jit.block_selinv,
         lambda: (D, U, L), lambda out, args: out[0]),
    ]
    print(f"n = {n}")
    print(f"{'function':14s} {'numba_ms':>10s} {'python_ms':>10s} {'speedup':>8s} {'max_diff':>10s}")
    for name, fn, make, result in cases:
        fn(*make())  # compile
        t_jit, out_j, args_j = best_of(fn, make, 5)
        t_py, out_p, args_p = best_of(fn.py_func, make, 1)
        diff = float(np.max(np.abs(result(out_j, args_j) - result(out_p, args_p))))
        print(f"{name:14s} {1e3 * t_jit:10.3f} {1e3 * t_py:10.1f} {t_py / t_jit:8.0f} {diff:10.2e}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20000)
