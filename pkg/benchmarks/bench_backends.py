"""Timing comparison of the compiled EM core against the numpy fallback.

Runs the raw per-sweep kernel and the full embedding on the same random
networks under every available backend and prints per-call timings plus the
speedup relative to numpy. Usage:

    python benchmarks/bench_backends.py [--nodes 60] [--dim 6] [--repeats 50]
"""

import argparse
import time

import numpy as np

from lsgpr import embed
from lsgpr import _kernels


def random_network(rng, p, density=0.4):
    upper = np.triu(rng.random((p, p)) < density, k=1)
    return (upper | upper.T).astype(np.float64)


def time_sweeps(backend, adj, U0, a0, cfg, repeats):
    kern = _kernels.get_backend(backend)
    inv_s2 = 1.0 / cfg.sigma_u_sq
    per_neighbor = cfg.prior_term_mode == "verbatim"
    best = np.inf
    for _ in range(repeats):
        U = U0.copy()
        a = a0
        t0 = time.perf_counter()
        a = kern.em_sweep(adj, U, a, cfg.b, inv_s2, per_neighbor)
        best = min(best, time.perf_counter() - t0)
    return best


def time_embed(backend, adj, cfg, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        embed.embed_subject(adj, cfg, backend=backend,
                            rng=np.random.default_rng(0))
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=60)
    ap.add_argument("--dim", type=int, default=6)
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    cfg = embed.EmConfig(d=args.dim)
    adj = random_network(rng, args.nodes)
    U0 = embed.init_latent_scales(adj, cfg, rng=np.random.default_rng(1))
    a0 = 0.0

    backends = _kernels.available_backends()
    print("p=%d d=%d repeats=%d default backend=%s"
          % (args.nodes, args.dim, args.repeats, _kernels.BACKEND))
    print("%-8s %14s %14s" % ("backend", "em_sweep (ms)", "embed (ms)"))
    sweep_ms, embed_ms = {}, {}
    for be in backends:
        sweep_ms[be] = 1e3 * time_sweeps(be, adj, U0, a0, cfg, args.repeats)
        embed_ms[be] = 1e3 * time_embed(be, adj, cfg, max(3, args.repeats // 10))
        print("%-8s %14.3f %14.3f" % (be, sweep_ms[be], embed_ms[be]))
    if "cython" in sweep_ms and "numpy" in sweep_ms:
        print("cython speedup: %.1fx per sweep, %.1fx per embedding"
              % (sweep_ms["numpy"] / sweep_ms["cython"],
                 embed_ms["numpy"] / embed_ms["cython"]))

    # parity spot check: both backends walk the same path
    if len(backends) > 1:
        results = {}
        for be in backends:
            emb, trace = embed.embed_subject(adj, cfg, backend=be,
                                             rng=np.random.default_rng(2))
            results[be] = (emb.a, emb.U, len(trace))
        ref = results[backends[0]]
        for be in backends[1:]:
            da = abs(results[be][0] - ref[0])
            dU = float(np.abs(results[be][1] - ref[1]).max())
            print("parity %s vs %s: |da|=%.2e max|dU|=%.2e"
                  % (be, backends[0], da, dU))


if __name__ == "__main__":
    main()
