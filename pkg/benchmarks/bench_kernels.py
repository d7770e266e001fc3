"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both backends receive identical inputs; the script also reports the largest
absolute difference between their outputs.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import timeit

import numpy as np

from neurodyn import kernels
from neurodyn.plrnn import forcing_operators, init_params


def _problem(M=16, H=128, N=4, Bt=16, T=50, seed=0):
    rng = np.random.default_rng(seed)
    p = init_params("clipped_shallow", M, H, N, rng)
    # a zero hidden bias makes the clipped unit vanish; give the map real dynamics
    p = p.replace(W2=2.0 * p.W2, b1=rng.normal(0.0, 1.0, H))
    P, Kr = forcing_operators(p.B_obs)
    X = rng.normal(size=(Bt, T, N))
    return p, P, Kr, X


def bench_bptt(impl, p, P, Kr, X):
    return impl.bptt_shallow(p.A, p.W2, p.W3, p.b0, p.b1, p.B_obs, P, Kr, X, 0.1, 5, True)


def bench_lyapunov(impl, p, steps):
    z0 = np.full(p.M, 0.1)
    return impl.lyapunov_shallow(p.A, p.W2, p.W3, p.b0, p.b1, z0, steps, steps // 10, 1, True)


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def run(repeat=5, lyap_steps=2000):
    try:
        fast = kernels.get_backend("cython")
    except ImportError:
        print("compiled backend not built; only the Python backend is available", file=sys.stderr)
        fast = None
    slow = kernels.get_backend("python")
    p, P, Kr, X = _problem()
    cases = {
        "bptt_shallow (Bt=16, T=50, M=16, H=128)": lambda impl: bench_bptt(impl, p, P, Kr, X),
        f"lyapunov_shallow (T={lyap_steps}, M=16, H=128)": lambda impl: bench_lyapunov(impl, p, lyap_steps),
    }
    rows = []
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(slow), number=1, repeat=repeat))
        row = {"case": name, "python_s": t_py}
        if fast is not None:
            t_cy = min(timeit.repeat(lambda: fn(fast), number=1, repeat=repeat))
            row.update(cython_s=t_cy, speedup=t_py / t_cy, max_abs_diff=_max_diff(fn(fast), fn(slow)))
        rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--lyap-steps", type=int, default=2000)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    rows = run(args.repeat, args.lyap_steps)
    print(f"python {platform.python_version()}, numpy {np.__version__}, active backend: {kernels.BACKEND}")
    print(f"{'case':48s} {'python':>10s} {'cython':>10s} {'speedup':>8s} {'max |diff|':>11s}")
    for r in rows:
        cy = f"{r['cython_s'] * 1e3:8.2f}ms" if "cython_s" in r else "-"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else "-"
        diff = f"{r['max_abs_diff']:.1e}" if "max_abs_diff" in r else "-"
        print(f"{r['case']:48s} {r['python_s'] * 1e3:8.2f}ms {cy:>10s} {sp:>8s} {diff:>11s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
