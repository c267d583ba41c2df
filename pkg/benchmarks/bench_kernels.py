"""Compare the compiled kernel backend against the pure-NumPy fallback.

Run from the repo root after an editable install:

    python3 benchmarks/bench_kernels.py [--repeats 5]

Imports both backends directly, so the ISQF_PURE switch is not needed here.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from isqf._kernels import _pure

try:
    from isqf._kernels import _core
except ImportError:
    _core = None


def random_curve_args(rng, k=8, s=3):
    levels = np.sort(rng.uniform(0.03, 0.97, size=k))
    values = np.cumsum(rng.exponential(1.0, size=k)) - 2.0
    d = np.empty((k - 1, s + 1))
    p = np.empty((k - 1, s + 1))
    for seg in range(k - 1):
        frac = np.sort(rng.uniform(0.05, 0.95, size=s - 1)) if s > 1 else np.empty(0)
        d[seg] = np.concatenate([[levels[seg]], levels[seg] + frac * (levels[seg + 1] - levels[seg]), [levels[seg + 1]]])
        w = rng.uniform(0.1, 1.0, size=s)
        w = np.cumsum(w) / w.sum()
        p[seg] = np.concatenate([[values[seg]], values[seg] + w[:-1] * (values[seg + 1] - values[seg]), [values[seg + 1]]])
    # exponential tails anchored at the outer knots
    lt = (0, 1.0 / 1.3, values[0] - (1.0 / 1.3) * np.log(levels[0]))
    rt = (0, -1.0 / 1.1, values[-1] + (1.0 / 1.1) * np.log1p(-levels[-1]))
    return levels, values, d, p, lt, rt


def best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    levels, values, d, p, lt, rt = random_curve_args(rng)
    tail_args = lt + rt
    alphas = rng.uniform(0.001, 0.999, size=100_000)
    zs = rng.uniform(values[0] - 2.0, values[-1] + 2.0, size=100_000)

    B = 512
    bd = np.broadcast_to(d, (B,) + d.shape).copy()
    bp = np.broadcast_to(p, (B,) + p.shape).copy()
    bz = rng.uniform(values[0] - 1.0, values[-1] + 1.0, size=B)
    ta = np.full(B, lt[1])
    tb = np.full(B, lt[2])

    cases = [
        ("eval_quantile (100k)", lambda m: m.eval_quantile(levels, values, d, p, *tail_args, alphas)),
        ("eval_cdf (100k)", lambda m: m.eval_cdf(levels, values, d, p, *tail_args, zs)),
        ("crps_spline_grad (B=512)", lambda m: m.crps_spline_grad(levels, bd, bp, bz)),
        ("crps_exp_tail_grad (B=512)", lambda m: m.crps_exp_tail_grad(0, float(levels[0]), ta, tb, bz)),
    ]

    print("%-28s %12s %12s %9s" % ("kernel", "pure [ms]", "compiled", "speedup"))
    for name, call in cases:
        t_pure = best_of(lambda: call(_pure), args.repeats)
        if _core is None:
            print("%-28s %12.3f %12s %9s" % (name, 1e3 * t_pure, "n/a", "n/a"))
            continue
        out_p = call(_pure)
        out_c = call(_core)
        flat_p = np.concatenate([np.ravel(x) for x in (out_p if isinstance(out_p, tuple) else (out_p,))])
        flat_c = np.concatenate([np.ravel(x) for x in (out_c if isinstance(out_c, tuple) else (out_c,))])
        gap = np.max(np.abs(flat_p - flat_c) / np.maximum(np.abs(flat_p), 1.0))
        t_core = best_of(lambda: call(_core), args.repeats)
        print("%-28s %12.3f %12.3f %8.1fx   (max rel gap %.1e)"
              % (name, 1e3 * t_pure, 1e3 * t_core, t_pure / t_core, gap))
    if _core is None:
        print("compiled backend not built; run pip install -e . --no-build-isolation")


if __name__ == "__main__":
    main()
