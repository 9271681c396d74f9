"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at
import time through ``CQREG_NUMBA``.

    python3 benchmarks/bench_backends.py --sizes 100x2,400x4,1600x8
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def make_data(n, q, cens, seed):
    """Extreme-value errors with alternating slopes, uniform censoring."""
    from cqreg import Dataset

    rng = np.random.default_rng(seed)
    z = rng.random((n, q))
    slopes = np.array([(-1) ** (m + 1) / 2 for m in range(1, q + 1)])
    log_t = np.log(rng.standard_exponential(n)) + z @ slopes
    t = np.exp(log_t)
    if cens <= 0:
        c = np.full(n, np.inf)
    else:
        # C ~ U[0, h] censors with probability E[min(T, h)] / h; solve for h
        lo, hi = 1e-3, 1e3
        for _ in range(60):
            mid = np.sqrt(lo * hi)
            rate = np.mean(np.minimum(t, mid)) / mid
            lo, hi = (mid, hi) if rate > cens else (lo, mid)
        c = rng.random(n) * hi
    x = np.log(np.minimum(t, c))
    delta = (t <= c).astype(int)
    return Dataset(x, delta, np.column_stack([np.ones(n), z]))


def child(sizes, reps, cens):
    from cqreg import FitConfig, backend, fit

    out = {"backend": backend(), "rows": []}
    warm = make_data(30, 2, cens, 0)
    fit(warm)  # compile outside the timed region
    for n, q in sizes:
        times = []
        for r in range(reps):
            ds = make_data(n, q, cens, 1000 + r)
            t0 = time.perf_counter()
            fit(ds, FitConfig(residual_check=False))
            times.append(time.perf_counter() - t0)
        out["rows"].append({"n": n, "p": q + 1, "median_s": float(np.median(times)),
                            "min_s": float(np.min(times))})
    print(json.dumps(out))


def parse_sizes(text):
    sizes = []
    for tok in text.split(","):
        n, q = tok.lower().split("x")
        sizes.append((int(n), int(q)))
    return sizes


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--sizes", default="100x2,400x4,1600x8",
                    help="comma list of n x (non-constant covariates)")
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--censoring", type=float, default=0.25)
    ap.add_argument("--backends", default="numba,numpy")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    sizes = parse_sizes(args.sizes)
    if args.child:
        child(sizes, args.reps, args.censoring)
        return

    results = {}
    for name in args.backends.split(","):
        env = dict(os.environ, CQREG_NUMBA="1" if name == "numba" else "0")
        cmd = [sys.executable, __file__, "--child", "--sizes", args.sizes,
               "--reps", str(args.reps), "--censoring", str(args.censoring)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[name] = json.loads(res.stdout.strip().splitlines()[-1])

    names = list(results)
    print(f"{'n':>6} {'p':>3} " + " ".join(f"{b + ' (s)':>12}" for b in names)
          + ("   speedup" if len(names) == 2 else ""))
    for i, (n, q) in enumerate(sizes):
        vals = [results[b]["rows"][i]["median_s"] for b in names]
        line = f"{n:>6} {q + 1:>3} " + " ".join(f"{v:>12.4f}" for v in vals)
        if len(vals) == 2:
            line += f"   {vals[1] / vals[0]:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
