"""Time one particle step with the numba and numpy kernels.

    python benchmarks/bench_kernels.py [--particles 1000000] [--repeat 5] [--workers N]

Also runs a short end-to-end simulation with each backend. The numba
timings exclude the first (compiling) call.
"""
import argparse
import math
import time

import numpy as np

from dropsoak import _kernels, engine
from dropsoak import rng as _rng
from dropsoak.config import HOUR, table_config


def particles(n, rp, za, seed=0):
    g = np.random.default_rng(seed)
    r = rp * np.sqrt(g.random(n))
    th = 2 * np.pi * g.random(n)
    return r * np.cos(th), r * np.sin(th), za * g.random(n), np.arange(n, dtype=np.int64)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    if _kernels.HAVE_NUMBA and args.workers:
        _kernels.set_workers(args.workers)
    rp, za, D, dt = 0.1, 6e-3, 5e-11, 10.0
    sigma = math.sqrt(2 * D * dt)
    x, y, z, ids = particles(args.particles, rp, za)
    key = _rng.stream_key(1, _rng.STREAM_MOVE)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])

    print(f"one step of {args.particles} particles (best of {args.repeat})")
    results = {}
    for b in backends:
        def call():
            return _kernels.step_particles(x, y, z, ids, key, 3, sigma, 0.5, rp, za, backend=b)
        call()
        results[b] = best_of(call, args.repeat)
        print(f"  {b:6s} {results[b] * 1e3:9.1f} ms  "
              f"({args.particles / results[b] / 1e6:.1f} M particles/s)")
    if len(results) == 2:
        a = _kernels.step_particles(x, y, z, ids, key, 3, sigma, 0.5, rp, za, backend="numpy")
        b = _kernels.step_particles(x, y, z, ids, key, 3, sigma, 0.5, rp, za, backend="numba")
        same_status = np.array_equal(a[3], b[3])
        dev = max(np.max(np.abs(a[i] - b[i])) for i in range(3))
        print(f"  speedup {results['numpy'] / results['numba']:.1f}x; statuses identical: "
              f"{same_status}; max position difference {dev:.1e} m")

    cfg = table_config(0.1, kb0=1e-8).with_overrides(
        time_step_s=100.0, end_time_s=10 * HOUR, snapshot_times_s=(10 * HOUR,),
        **{"species.particle_weight_mol": 1e-11})
    print(f"end to end: {cfg.n_steps} steps, about 1e5 particles")
    for b in backends:
        t0 = time.perf_counter()
        res = engine.run(cfg, backend=b)
        print(f"  {b:6s} {time.perf_counter() - t0:7.2f} s  "
              f"(consumed {res.final_state.consumed})")


if __name__ == "__main__":
    main()
