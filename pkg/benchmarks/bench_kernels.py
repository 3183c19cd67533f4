"""Compare the compiled and numpy aggregation kernels on a synthetic graph.

    python3 benchmarks/bench_kernels.py --n-bits 10 --users 200 --dim 64
"""
import argparse

import numpy as np

from kgcrs import bench, data, embed, kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-bits", type=int, default=10)
    ap.add_argument("--users", type=int, default=200)
    ap.add_argument("--interactions", type=int, default=40)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--layers", type=int, default=4)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    ds = data.make_synthetic(args.n_bits, seed=0, n_users=args.users, interactions=args.interactions)
    g = ds.graph()
    print(f"{g.n_entities} entities, {g.n_triples} triples, {len(g.nbr)} adjacency slots; "
          f"active backend: {kernels.BACKEND}")
    rows = bench.bench_kernels(g, args.dim, args.reps)
    print(bench.format_table(rows))

    by = {(r["op"], r["backend"]): r["median_s"] for r in rows}
    if any(b == "cython" for _, b in by):
        print()
        for op in ("spmm", "spmm_t", "row_softmax"):
            print(f"{op:<12} speed-up {by[op, 'python'] / by[op, 'cython']:6.1f}x")

    # full forward pass, as used by every scoring call
    params = embed.init_params(g.counts, args.dim, args.layers, np.random.default_rng(0))
    cache = embed.refresh_attention(g, params, normalize=True)
    fwd = bench.median_time(lambda: embed.forward(g, params, cache), args.reps)
    print(f"\nforward pass ({args.layers} layers, active backend): {fwd * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
