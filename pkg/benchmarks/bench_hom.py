"""Compiled vs pure-Python homomorphism search.

    python3 benchmarks/bench_hom.py [--pairs N] [--seed S]

Times three workloads with each backend: containment on random query pairs
(mostly decided quickly, so marshalling dominates), an odd cycle against a
bipartite graph (no homomorphism exists, so the search is exhaustive), and
one full SpGEMM scheduler run.  The containment cache is cleared between runs.
"""

import argparse
import random
import time

from sparse_asympt import _hom_py, queries
from sparse_asympt.kernels import kernel
from sparse_asympt.queries import Clause, Var, make_cq
from sparse_asympt.scheduler import PipelineOptions, schedule

SIG = {"A": ("I", "J"), "B": ("J", "K"), "C": ("I", "K"), "D": ("I",)}


def random_cq(rng, n_clauses, n_vars):
    pool = {d: [Var(f"{d.lower()}{k}", d) for k in range(n_vars)] for d in "IJK"}
    clauses = tuple(Clause(p, tuple(rng.choice(pool[d]) for d in SIG[p]))
                    for p in (rng.choice(list(SIG)) for _ in range(n_clauses)))
    used = sorted({v for c in clauses for v in c.args}, key=lambda v: v.name)
    head = tuple(rng.sample(used, min(2, len(used))))
    return make_cq(head, clauses)


def graph(edges, n, prefix):
    vs = [Var(f"{prefix}{k}", "V") for k in range(n)]
    return make_cq((), [Clause("E", (vs[a], vs[b])) for a, b in edges])


def cycle_vs_bipartite(rng, n, length):
    half = n // 2
    edges = [(a, b) for a in range(half) for b in range(half, n) if rng.random() < 0.6]
    edges += [(b, a) for a, b in edges]
    return graph(edges, n, "p"), graph([(k, (k + 1) % length) for k in range(length)], length, "q")


def backends():
    out = {"python": _hom_py.find_hom}
    try:
        from sparse_asympt import _hom_ext
        out["compiled"] = _hom_ext.find_hom
    except ImportError:
        pass
    return out


def timed(fn):
    queries._search.cache_clear()
    t0 = time.perf_counter()
    r = fn()
    return time.perf_counter() - t0, r


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--pairs", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--graph", type=int, default=12, help="vertices in the bipartite graph")
    ap.add_argument("--cycle", type=int, default=9, help="odd cycle length")
    args = ap.parse_args(argv)
    rng = random.Random(args.seed)
    pairs = [(random_cq(rng, rng.randint(3, 8), 3), random_cq(rng, rng.randint(2, 6), 3))
             for _ in range(args.pairs)]
    g, c = cycle_vs_bipartite(rng, args.graph, args.cycle)
    orig = queries.find_hom
    rows = []
    try:
        for name, fn in backends().items():
            queries.find_hom = fn
            t_cq, hits = timed(lambda: sum(queries.cq_contained(p, q) is not None for p, q in pairs))
            t_cyc, _ = timed(lambda: queries.cq_contained(g, c))
            t_sched, _ = timed(lambda: schedule(kernel("spgemm"), PipelineOptions()))
            rows.append((name, t_cq, hits, t_cyc, t_sched))
    finally:
        queries.find_hom = orig
        queries._search.cache_clear()
    print(f"{'backend':<10} {'random pairs':>13} {'contained':>10} {'cycle search':>13} {'spgemm schedule':>16}")
    for name, t_cq, hits, t_cyc, t_sched in rows:
        print(f"{name:<10} {t_cq:>12.3f}s {hits:>10} {t_cyc:>12.3f}s {t_sched:>15.3f}s")
    if len(rows) == 2:
        (_, a1, _, a2, a3), (_, b1, _, b2, b3) = rows
        print(f"{'speedup':<10} {a1 / b1:>12.1f}x {'':>10} {a2 / b2:>12.1f}x {a3 / b3:>15.1f}x")


if __name__ == "__main__":
    main()
