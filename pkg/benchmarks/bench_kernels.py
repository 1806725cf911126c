"""Compiled vs pure-Python decoder kernels on random ILS instances.

Usage::

    python3 benchmarks/bench_kernels.py [--instances 50] [--seed 0] [--json out.json]

Both backends solve the same instances; the script checks they return
identical minimizers and reports the median solver time per backend, method
and problem size.
"""
import argparse
import json
import statistics
import sys

import numpy as np

from fcsdpc.condense import lower_factor
from fcsdpc.decoder import IlsProblem, available_backends, enumerate_ils, sphere_decode
from fcsdpc.plant import ControlSet

SIZES = ((3, 1), (3, 2), (3, 3), (2, 4), (3, 4))  # (m, N_f)


def instance(rng, m, N_f):
    N = m * N_f
    G = rng.standard_normal((N, N))
    L = lower_factor(G @ G.T + 0.1 * np.eye(N))
    cs = ControlSet.shared((-1.0, 0.0, 1.0), m, 1.0)
    return IlsProblem(L, L @ rng.uniform(-1.5, 1.5, N), cs, rng.choice([-1.0, 0.0, 1.0], m))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the table as JSON")
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the Python kernels are available",
              file=sys.stderr)
    rows = []
    print(f"{'m':>2} {'N_f':>3} {'method':<5} " + " ".join(f"{b + ' [us]':>14}" for b in backends)
          + "  speedup")
    for m, N_f in SIZES:
        rng = np.random.default_rng([args.seed, m, N_f])
        probs = [instance(rng, m, N_f) for _ in range(args.instances)]
        for method, fn in (("SDA", sphere_decode), ("ENUM", enumerate_ils)):
            times, answers = {}, {}
            for b in backends:
                res = [fn(p, backend=b) for p in probs]
                times[b] = statistics.median(r.wall_time_ns for r in res) / 1e3
                answers[b] = [(r.u_opt.tobytes(), r.cost) for r in res]
            if len(set(map(tuple, answers.values()))) != 1:
                raise SystemExit(f"backends disagree at m={m}, N_f={N_f}, {method}")
            speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
            rows.append({"m": m, "N_f": N_f, "method": method, "median_us": times,
                         "speedup": speedup})
            print(f"{m:>2} {N_f:>3} {method:<5} " + " ".join(f"{times[b]:>14.1f}" for b in backends)
                  + f"  {speedup:7.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
