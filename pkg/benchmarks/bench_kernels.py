"""Compare the compiled kernels against the pure-Python fallback.

Runs the same workloads under each available backend and reports the best
wall time over ``--repeat`` runs, plus the speedup of the compiled backend.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from branchlab import autodiff as ad
from branchlab import kernels
from branchlab.bnb import solve
from branchlab.generators import GenSpec, generate
from branchlab.gnn import build_model
from branchlab.lp import solve_lp
from branchlab.milp import encode_graph, from_dense
from branchlab.policies import MostFractionalPolicy


def random_lps(count: int, n: int, m: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, size=n)
        b = A @ x0 + rng.uniform(0.1, 1.0, size=m)
        out.append(from_dense(rng.normal(size=n), A, b, np.zeros(n), np.full(n, 2.0)))
    return out


def workloads(seed: int):
    lps = random_lps(20, 40, 30, seed)
    cover = [generate(GenSpec("setcover", "custom", seed + k, (60, 30), {"density": 0.3})) for k in range(3)]
    graph = encode_graph(cover[0])
    model = build_model("mpnn", hidden=32, seed=seed)
    cands = list(range(graph.n))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 500, size=200_000)
    src = rng.normal(size=(200_000, 8))

    def lp():
        for inst in lps:
            solve_lp(inst)

    def bnb():
        for inst in cover:
            solve(inst, MostFractionalPolicy())

    def scatter():
        out = np.zeros((500, 8))
        kernels.scatter_add(out, idx, src)

    def gnn_step():
        for p in model.parameters():
            p.grad = None
        y = model.candidate_scores(graph, cands)
        ad.sum_rows(y).backward()

    return {"lp_solve (20 LPs 40x30)": lp, "bnb mostfrac (3 setcover 60x30)": bnb,
            "scatter_add (200k rows)": scatter, "mpnn forward+backward": gnn_step}


def best_time(fn, repeat: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", help="also write results to this file")
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    results = {}
    for name, fn in workloads(args.seed).items():
        results[name] = {}
        for b in backends:
            with kernels.use_backend(b):
                results[name][b] = best_time(fn, args.repeat)

    print(f"{'workload':34s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, row in results.items():
        line = f"{name:34s}" + "".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        if "compiled" in row:
            line += f"{row['python'] / row['compiled']:11.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"backends": backends, "seconds": results}, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
