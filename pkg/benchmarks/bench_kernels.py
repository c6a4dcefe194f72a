"""Compare the numba kernels with their pure-numpy twins.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 5]

Both variants are called on the same random inputs; the script checks that
they agree and prints the best-of-N wall time for each.  The numba column
is empty when NATMHD_PURE_NUMPY=1 (the jitted versions are not built).
"""

import argparse
import time

import numpy as np

from natmhd import _kernels as K


def inputs(n, rng):
    d1 = rng.standard_normal((n, 4, 3))
    d1[:, 1:, :] += 3 * np.eye(3)  # keep the spatial Jacobian well away from singular
    d2 = rng.standard_normal((n, 4, 4, 3))
    d2 = 0.5 * (d2 + d2.transpose(0, 2, 1, 3))
    rho = 1 + rng.random(n)
    drho = rng.standard_normal((n, 4))
    dP = rng.standard_normal((n, 4))
    f = rng.standard_normal(n)
    ginv = rng.standard_normal((n, 4, 4))
    dg = rng.standard_normal((n, 4, 4, 4))
    return d1, d2, rho, drho, dP, f, ginv, dg


def best(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / (1 + np.abs(a))))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--curve", type=int, default=2048, help="polygon size for the linking kernel")
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    d1, d2, rho, drho, dP, f, ginv, dg = inputs(args.n, rng)
    s = np.linspace(0, 2 * np.pi, args.curve, endpoint=False)
    c1 = np.stack([np.cos(s), np.sin(s), 0 * s], axis=1)
    c2 = np.stack([1 + np.cos(s), 0 * s, np.sin(s)], axis=1)
    J = d1[:, 1:, :].transpose(0, 2, 1).copy()

    cases = {
        "det3": ((J,), {}),
        "inv3": ((J,), {}),
        "natural_residual": ((d1, d2, rho, drho, dP, f), {}),
        "eulerian_residual": ((d1, d2, rho, drho, dP, True), {}),
        "christoffel": ((ginv, dg), {}),
        "gauss_linking": ((c1, c2), {}),
    }
    print(f"backend={K.BACKEND} n={args.n} curve={args.curve}")
    print(f"{'kernel':<20}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max rel diff':>14}")
    for name, (a, kw) in cases.items():
        fnp = getattr(K, f"{name}_numpy")
        t_np = best(lambda: fnp(*a, **kw), args.repeat)
        fnb = getattr(K, f"{name}_numba", None)
        if fnb is None:
            print(f"{name:<20}{t_np:>12.4f}{'-':>12}{'-':>10}{'-':>14}")
            continue
        t_nb = best(lambda: fnb(*a, **kw), args.repeat)
        diff = max_diff(fnp(*a, **kw), fnb(*a, **kw))
        print(f"{name:<20}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
