"""Benchmark the compiled event-loop kernel against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--replicas 200] [--horizon 50]

Both kernels draw from identical streams, so they also serve as a live
equivalence check: the script verifies that the trajectories match bit for
bit before timing them.
"""

import argparse
import time

import numpy as np

from bbbsim import RngStream
from bbbsim._backend import available_backends
from bbbsim.engine import RECORD_ENDPOINT, observation_grid


def run_batch(kernel_mod, name, N, d, horizon, replicas, seed):
    grid = observation_grid(horizon, horizon)
    t0 = time.perf_counter()
    events = 0
    for r in range(replicas):
        rng = RngStream(seed, r)
        pos0 = np.zeros((N, d))
        _, _, evs = kernel_mod.simulate_core(pos0, N, horizon, grid, rng, RECORD_ENDPOINT)
        events += len(evs)
    elapsed = time.perf_counter() - t0
    rate = events / elapsed
    print(f"  {name:<10} {elapsed:8.3f}s   {events:>9d} events   {rate:>12.0f} events/s")
    return elapsed, events


def check_equivalence(backends, N, d, seed):
    grid = observation_grid(5.0, 0.5)
    outs = {}
    for name, mod in backends.items():
        rng = RngStream(seed, 0)
        outs[name] = mod.simulate_core(np.zeros((N, d)), N, 5.0, grid, rng, 2)
    if len(outs) < 2:
        return
    (t1, p1, e1), (t2, p2, e2) = outs.values()
    assert t1 == t2 and len(e1) == len(e2)
    assert all(np.array_equal(a, b) for a, b in zip(p1, p2))
    print(f"  equivalence check ok: {len(e1)} events, {len(t1)} observations identical")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--replicas", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=50.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    for N, d in ((1, 1), (3, 2), (10, 3)):
        print(f"\nN={N}, d={d}, horizon={args.horizon}, replicas={args.replicas}")
        check_equivalence(backends, N, d, args.seed)
        times = {}
        for name, mod in backends.items():
            times[name], _ = run_batch(mod, name, N, d, args.horizon,
                                       args.replicas, args.seed)
        if len(times) == 2:
            print(f"  speedup: {times['python'] / times['compiled']:.1f}x")


if __name__ == "__main__":
    main()
