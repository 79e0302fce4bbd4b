"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 3] [--scale 1.0]

Each kernel runs once per backend to warm up (numba compiles on first
call), then ``--repeat`` times; the best wall time is reported together with
the largest difference between the two backends' results (chordal
distance for points of the sphere).
"""
import argparse
import time

import numpy as np

from bifscope.family import build_family
from bifscope.green import bif_potential_grid
from bifscope.grid import Window
from bifscope.measure import mes_sample, repelling_start, tracked_paths
from bifscope.numerics.forms import chordal, form_roots_batch

LATTES = "(z^2-c)^2/(4*z*(z-1)*(z-c))"


def cases(scale):
    quad = build_family("z^2+c", "c")
    lattes = build_family(LATTES, "2")
    res = int(256 * scale ** 0.5)
    n = int(100_000 * scale)
    lam = 0.3 + 0.1j
    u = np.random.Generator(np.random.Philox(0)).random((max(int(200 * scale), 1), 130))
    start = repelling_start(lattes[0], lam)[:2]
    rng = np.random.default_rng(0)
    forms = rng.normal(size=(int(20_000 * scale), 6)) + 1j * rng.normal(size=(int(20_000 * scale), 6))

    def potential(b):
        return bif_potential_grid(*quad, Window(-2.5, 1.5, -2, 2), res, backend=b)[0]

    def sample(b):
        s = mes_sample(lattes[0], lam, n, per_chain=100, backend=b)
        return s.Z, s.W

    def track(b):
        Z, W, _, _ = tracked_paths(lattes[0], lam, u, start, backend=b)
        return Z, W

    def roots(b):
        A, B, _, _ = form_roots_batch(forms, b)
        # compare sorted root sets; order may differ between backends
        return np.sort_complex(A / B)

    return [
        (f"potential grid {res}x{res}", potential),
        (f"equilibrium samples n={n}", sample),
        (f"tracked paths {u.shape[0]}x{u.shape[1]}", track),
        (f"batch roots {forms.shape[0]} quintics", roots),
    ]


def max_diff(a, b):
    if isinstance(a, tuple):
        # points of the sphere: chordal distance
        d = chordal(a[0], a[1], b[0], b[1])
    else:
        d = np.abs(a - b)
    d = d[np.isfinite(d)]
    return float(d.max()) if d.size else float("nan")


def best_time(fn, backend, repeat):
    out = fn(backend)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(backend)
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = ap.parse_args()

    print(f"{'kernel':36s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s} {'max diff':>9s}")
    for name, fn in cases(args.scale):
        tn, a = best_time(fn, "numba", args.repeat)
        tp, b = best_time(fn, "numpy", args.repeat)
        print(f"{name:36s} {tn:9.3f} {tp:9.3f} {tp / tn:8.1f} {max_diff(a, b):9.1e}")


if __name__ == "__main__":
    main()
