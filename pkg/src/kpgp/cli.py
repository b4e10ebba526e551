"""Command-line front end.

Commands: ``fit``, ``predict``, ``kp-dump``, ``loglik``, ``optimize``,
``bench`` and ``mdkp``.  Data files are CSV with a header row.  Exit codes:
0 success, 2 input error, 3 numerical failure.
"""

import argparse
import csv
import logging
import sys
import time

import numpy as np

from .errors import InputError, NumericalError
from .gp import fit, grid_search, load_model, log_likelihood, optimize, profile_grid
from .kernels import parse_kernel
from .kp import build_kp
from .multidim import additive_kp, centroid_value, product_kp, verify_vanish
from .oracle import DEFAULT_CAP, DenseModel, dense_loglik

log = logging.getLogger("kpgp")

DEFAULT_KERNEL = "matern(p=2,ls=1.0,var=1.0)"


# -- CSV helpers --------------------------------------------------------------

def read_csv(path, columns=None, prefix=None):
    """Read a headed numeric CSV.

    ``columns`` names required columns (returned in that order); ``prefix``
    instead collects ``prefix1, prefix2, ...``.  Returns ``(header, data)``
    with ``data`` of shape ``(rows, len(header))``.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    with fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: empty file")
    header = [c.strip() for c in rows[0][1]]
    if columns is not None:
        missing = [c for c in columns if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)} in header {header}")
        idx = [header.index(c) for c in columns]
        names = list(columns)
    else:
        names = [f"{prefix}{d}" for d in range(1, len(header) + 1) if f"{prefix}{d}" in header]
        if not names:
            raise InputError(f"{path}: expected columns {prefix}1, {prefix}2, ...")
        idx = [header.index(c) for c in names]
    data = []
    for line, r in rows[1:]:
        if len(r) != len(header):
            raise InputError(f"{path}:{line}: expected {len(header)} fields, got {len(r)}")
        try:
            data.append([float(r[i]) for i in idx])
        except ValueError:
            raise InputError(f"{path}:{line}: non-numeric value in {r}") from None
    if not data:
        raise InputError(f"{path}: no data rows")
    data = np.array(data)
    if not np.all(np.isfinite(data)):
        line = rows[1 + int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0])][0]
        raise InputError(f"{path}:{line}: non-finite value")
    return names, data, [line for line, _ in rows[1:]]


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, columns):
    cols = [c if isinstance(c, (list, tuple)) else np.atleast_1d(np.asarray(c)) for c in columns]
    out = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])
    finally:
        if out is not sys.stdout:
            out.close()


def read_training(path):
    """``t,y`` data sorted by ``t``; duplicates are rejected with line numbers."""
    _, data, lines = read_csv(path, columns=("t", "y"))
    t, y = data[:, 0], data[:, 1]
    order = np.argsort(t, kind="stable")
    if np.any(np.diff(order) < 0):
        log.warning("%s: input not sorted by t; sorted %d rows", path, t.size)
    ts = t[order]
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        a, b = order[dup[0]], order[dup[0] + 1]
        raise InputError(
            f"{path}: duplicate t = {float(ts[dup[0]])!r} on lines {lines[a]} and {lines[b]}"
        )
    return ts, y[order]


def parse_grid(text):
    """``lo:hi:n`` into ``(lo, hi, n)``."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise InputError(f"grid {text!r} is not of the form lo:hi:n") from None
    if n < 1 or not (np.isfinite(lo) and np.isfinite(hi)) or (n > 1 and hi <= lo):
        raise InputError(f"grid {text!r}: need n >= 1 and lo < hi")
    return lo, hi, n


# -- commands -----------------------------------------------------------------

def _train(kernel, t, y, noise, engine, var_method="selected"):
    if engine == "dense":
        return DenseModel(kernel, t, y, noise, cap=DEFAULT_CAP)
    return fit(kernel, t, y, noise, var_method=var_method)


def cmd_fit(args):
    kernel = parse_kernel(args.kernel)
    t, y = read_training(args.inp)
    model = _train(kernel, t, y, args.noise, args.engine)
    model.save(args.model)
    log.info("fitted %s on %d points with %s engine -> %s", kernel.spec(), t.size, args.engine, args.model)


def cmd_predict(args):
    model = load_model(args.model)
    _, data, _ = read_csv(args.inp, columns=("t",))
    q = data[:, 0]
    engine = args.engine or ("dense" if isinstance(model, DenseModel) else "kp")
    if engine == "dense" and not isinstance(model, DenseModel):
        model = DenseModel(model.kernel, model.points, model.Z, model.noise_var)
    elif engine == "kp" and isinstance(model, DenseModel):
        model = fit(model.kernel, model.points, model.Z, model.noise_var)
    if engine == "kp" and args.var_method != "selected":
        model.var_method = args.var_method
    mean, var = model.predict(q)
    write_csv(args.out, ["t", "mean", "var"], [q, mean, var])
    neg = getattr(model, "negative_variance_count", 0)
    if neg:
        log.warning("%d variance(s) were clamped from clearly negative values", neg)


def cmd_kp_dump(args):
    kernel = parse_kernel(args.kernel)
    _, data, _ = read_csv(args.inp, columns=("t",))
    T = np.sort(data[:, 0])
    fac = build_kp(kernel, T, args.method)
    if args.grid:
        lo, hi, n = parse_grid(args.grid)
    else:
        lo, hi, n = T[0], T[-1], 201
    g = np.linspace(lo, hi, n)
    kernel.check_domain(g)
    B = fac.phi_dense_at(g)
    write_csv(args.out, ["t"] + [f"phi_{i + 1}" for i in range(fac.n)], [g] + list(B.T))


def cmd_loglik(args):
    kernel = parse_kernel(args.kernel)
    t, y = read_training(args.inp)
    if args.engine == "dense":
        value = dense_loglik(kernel, t, y, args.noise)
    else:
        value = log_likelihood(kernel, t, y, args.noise)
    print(f"{value!r}")


def cmd_optimize(args):
    kernel = parse_kernel(args.kernel)
    t, y = read_training(args.inp)
    names = kernel.param_names
    if args.grid:
        lo, hi, n = parse_grid(args.grid)
        values = profile_grid(lo, hi, n) if n > 1 else [lo]
        base = kernel.params
        thetas = []
        for v in values:
            th = base.copy()
            th[0] = v
            thetas.append(th)
        if args.engine == "dense":
            Ls = [dense_loglik(kernel.with_params(th), t, y, args.noise) for th in thetas]
            best = int(np.argmax(Ls))
            theta, L = thetas[best], Ls[best]
        else:
            res = grid_search(kernel, thetas, t, y, args.noise)
            theta, L, Ls = res.theta, res.loglik, res.history
        if args.out:
            write_csv(args.out, [names[0], "loglik"], [values, Ls])
        status = "grid"
    else:
        if args.engine == "dense":
            raise InputError("gradient optimization runs on the kp engine only; use --grid with --engine dense")
        res = optimize(kernel, kernel.params, t, y, args.noise)
        theta, L = res.theta, res.loglik
        status = f"{res.message} after {res.n_iter} iterations"
        if not res.converged:
            log.warning("optimizer did not converge: %s", res.message)
    for name, v in zip(names, theta):
        print(f"{name}={float(v)!r}")
    print(f"loglik={float(L)!r}")
    print(f"kernel={kernel.with_params(theta).spec()}")
    print(f"status={status}")


def bench_data(kernel, n, seed=0, spacing=0.1):
    """Synthetic grid ``t_i = (i + 1) * spacing`` and observations.

    ``y`` is a prior draw (dense Cholesky) for ``n <= 2000`` and a fixed
    smooth function beyond; timings do not depend on the values.
    """
    t = spacing * np.arange(1, n + 1)
    rng = np.random.default_rng(seed)
    if n <= 2000:
        K = kernel.gram(t) + 1e-8 * np.eye(n)
        y = np.linalg.cholesky(K) @ rng.standard_normal(n)
    else:
        y = np.sin(t) + 0.5 * np.cos(0.3 * t)
    return t, y


def run_bench(kernel, sizes, noise=0.01, queries=1000, engine="kp", seed=0):
    """Rows ``(n, fit_ms, predict_us_per_query, loglik_ms)``.

    Predict time is the mean over single-point calls (mean and variance), so
    it measures the per-query cost rather than vectorized throughput.
    """
    rows = []
    for n in sizes:
        t, y = bench_data(kernel, n, seed)
        if engine == "dense" and n > DEFAULT_CAP:
            log.info("dense engine refuses n = %d > cap %d; skipped", n, DEFAULT_CAP)
            continue
        q = np.random.default_rng(seed + 1).uniform(t[0], t[-1], queries)
        t0 = time.perf_counter()
        model = _train(kernel, t, y, noise, engine)
        if engine == "kp":
            model.var_band
        t1 = time.perf_counter()
        model.predict(float(q[0]))
        t2 = time.perf_counter()
        for x in q:
            model.predict(float(x))
        t3 = time.perf_counter()
        if engine == "dense":
            model.loglik()
        else:
            log_likelihood(kernel, t, y, noise)
        t4 = time.perf_counter()
        rows.append((n, 1e3 * (t1 - t0), 1e6 * (t3 - t2) / queries, 1e3 * (t4 - t3)))
    return rows


def cmd_bench(args):
    kernel = parse_kernel(args.kernel)
    sizes = [int(float(s)) for s in args.sizes.split(",")]
    # compile the jitted kernels before timing
    run_bench(kernel, [200], args.noise, 10, args.engine)
    rows = run_bench(kernel, sizes, args.noise, args.queries, args.engine)
    write_csv(args.out, ["n", "fit_ms", "predict_us_per_query", "loglik_ms"], list(zip(*rows)) or [[]] * 4)


def cmd_mdkp(args):
    specs = [s for s in args.kernel.split(";") if s.strip()]
    names, P, _ = read_csv(args.inp, prefix="t_")
    D = P.shape[1]
    if len(specs) == 1:
        specs = specs * D
    if len(specs) != D:
        raise InputError(f"{len(specs)} kernel specs for {D} dimensions")
    kernels = [parse_kernel(s) for s in specs]
    build = additive_kp if args.structure == "additive" else product_kp
    kp = build(kernels, P)
    write_csv(args.out, names + ["coef"], list(P.T) + [kp.coeffs])
    for d, (lo, hi) in enumerate(kp.vanish_region):
        print(f"U_{d + 1}=(-inf,{lo!r})u({hi!r},inf)")
    print(f"residual={verify_vanish(kp, seed=args.seed)!r}")
    print(f"centroid={centroid_value(kp)!r}")
    if args.surface:
        n = parse_grid(args.grid)[2] if args.grid else 41
        axes = []
        for lo, hi in kp.vanish_region:
            pad = 0.5 * (hi - lo) if hi > lo else 1.0
            axes.append(np.linspace(lo - pad, hi + pad, n))
        G = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, D)
        write_csv(args.surface, names + ["value"], list(G.T) + [kp(G)])


# -- entry point ---------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="kpgp", description="Kernel-packet Gaussian-process regression.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True, engine=True, kernel=True):
        if kernel:
            sp.add_argument("--kernel", default=DEFAULT_KERNEL, help="kernel spec, e.g. matern(p=2,ls=1.0)")
        if data:
            sp.add_argument("--noise", type=float, default=0.0, help="observation noise variance")
        if engine:
            sp.add_argument("--engine", choices=("kp", "dense"), default="kp")
        sp.add_argument("--out", default=None, help="output path (default stdout)")

    sp = sub.add_parser("fit", help="train a model from a t,y CSV")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--model", required=True, help="model file to write")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("predict", help="posterior mean and variance at the t column of a CSV")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--engine", choices=("kp", "dense"), default=None,
                    help="override the engine stored in the model")
    sp.add_argument("--var-method", choices=("selected", "recursion", "direct"), default="selected")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("kp-dump", help="sample all KP basis functions on a grid")
    common(sp, data=False, engine=False)
    sp.add_argument("--in", dest="inp", required=True, help="CSV with a t column")
    sp.add_argument("--grid", default=None, help="lo:hi:n (default: data range, 201 points)")
    sp.add_argument("--method", choices=("span", "covariance"), default="span")
    sp.set_defaults(func=cmd_kp_dump)

    sp = sub.add_parser("loglik", help="marginal log-likelihood of a t,y CSV")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.set_defaults(func=cmd_loglik)

    sp = sub.add_parser("optimize", help="maximize the log-likelihood")
    common(sp)
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--grid", default=None,
                    help="lo:hi:n log-spaced grid over the first kernel parameter; gradient ascent if absent")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("bench", help="fit/predict/loglik timings on synthetic grids")
    common(sp, data=True)
    sp.set_defaults(noise=0.01)
    sp.add_argument("--sizes", default="1000,10000,100000")
    sp.add_argument("--queries", type=int, default=1000)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("mdkp", help="multi-dimensional KP on scattered points")
    sp.add_argument("--kernel", default=DEFAULT_KERNEL,
                    help="per-dimension kernel spec; ';'-separated list for different dimensions")
    sp.add_argument("--structure", choices=("additive", "product"), default="additive")
    sp.add_argument("--in", dest="inp", required=True, help="CSV with columns t_1..t_D")
    sp.add_argument("--out", default=None, help="coefficients CSV")
    sp.add_argument("--surface", default=None, help="sampled KP surface CSV")
    sp.add_argument("--grid", default=None, help="lo:hi:n; only n (points per axis) is used")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_mdkp)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="kpgp: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except InputError as exc:
        print(f"kpgp: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"kpgp: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"kpgp: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
