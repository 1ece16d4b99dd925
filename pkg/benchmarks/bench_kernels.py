"""Compiled vs numpy kernel backends.

Times each hot kernel in isolation on a sparse ridge-dual column block, then
the end-to-end sparsified iteration (one worker, fixed budget) with each
backend, and checks that both backends produce the same iterate.

    python benchmarks/bench_kernels.py [--d 2000] [--n 5000] [--density 0.01]
"""

import argparse
import time
import timeit

import numpy as np

from a2bcd import kernels
from a2bcd.problems import random_ridge_data, ridge_dual_oracle
from a2bcd.runtime import SparseA2BCD
from a2bcd.core import BlockSampler
from a2bcd.schedule import make_schedule


def kernel_timings(oracle, number):
    A = oracle.affine.A
    indptr = A.indptr.astype(np.intc)
    indices = A.indices.astype(np.intc)
    data = A.data.astype(np.float64)
    rng = np.random.default_rng(0)
    n, m = oracle.dim, A.shape[0]
    p, q = rng.standard_normal(n), rng.standard_normal(n)
    Ap, Aq = A @ p, A @ q
    shift = oracle.affine.shift.astype(np.float64)
    out = np.empty(1)
    grad = np.array([1e-12])
    rows = []
    for name, mod in kernels.BACKENDS.items():
        cases = {
            "ridge_block_grad": lambda: mod.ridge_block_grad(
                indptr, indices, data, 7, 8, Ap, Aq, p, q, shift, 0.9, 0.1,
                oracle.affine.scale_prod, oracle.affine.scale_id, out),
            "ridge_scatter": lambda: mod.ridge_scatter(
                indptr, indices, data, 7, 8, grad, 1.0, -1.0, p, q, Ap, Aq),
            "combine(full)": lambda: mod.combine(0.9, 0.1, p, q, np.empty(n)),
        }
        for kname, fn in cases.items():
            best = min(timeit.repeat(fn, number=number, repeat=5)) / number
            rows.append((kname, name, best))
    return rows


def end_to_end(oracle, budget, backend):
    sched = make_schedule(oracle.params, 0)
    eng = SparseA2BCD(oracle, sched, backend=backend)
    sampler = BlockSampler.from_params(oracle.params, 0)
    blocks = [sampler.sample() for _ in range(budget)]
    t0 = time.perf_counter()
    for i in blocks:
        eng.step(i)
    dt = time.perf_counter() - t0
    return dt, eng.recover_yv()[0]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=2000)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--density", type=float, default=0.01)
    ap.add_argument("--lam", type=float, default=1e-3)
    ap.add_argument("--budget", type=int, default=20000)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args(argv)

    A, labels = random_ridge_data(args.d, args.n, args.density, seed=0)
    oracle = ridge_dual_oracle(A, labels, args.lam)
    print(f"ridge dual: d={args.d} n={args.n} nnz={A.nnz} backends={list(kernels.BACKENDS)}")
    print(f"{'kernel':<18}{'backend':<8}{'us/call':>10}")
    for kname, backend, sec in kernel_timings(oracle, args.number):
        print(f"{kname:<18}{backend:<8}{sec * 1e6:>10.2f}")

    results = {b: end_to_end(oracle, args.budget, b) for b in kernels.BACKENDS}
    print(f"\nend to end, {args.budget} iterations, 1 worker")
    for b, (dt, _) in results.items():
        print(f"  {b:<8}{dt:8.3f} s  {args.budget / dt:10.0f} it/s")
    if len(results) == 2:
        (t_c, y_c), (t_p, y_p) = results["cython"], results["python"]
        rel = np.linalg.norm(y_c - y_p) / max(np.linalg.norm(y_p), 1e-300)
        print(f"  speedup {t_p / t_c:.2f}x, iterate agreement {rel:.2e} (relative)")


if __name__ == "__main__":
    main()
