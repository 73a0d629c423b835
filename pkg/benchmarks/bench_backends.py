"""Time predictor training on the compiled and pure-Python backends.

    python benchmarks/bench_backends.py [--pool 100] [--epochs 50] [--repeats 3]
"""
import argparse
import time

import numpy as np

from npenas.predictor import TrainConfig, available_backends, set_backend, train_point, train_uncertainty
from npenas.space import build_microbench, evaluate, sample_direct


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pool", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    space, oracle = build_microbench(0)
    rng = np.random.default_rng(0)
    data = [evaluate(oracle, g, i, i) for i, g in enumerate(sample_direct(space, args.pool, rng))]
    jobs = {
        "uncertainty": lambda: train_uncertainty(data, TrainConfig.uncertainty(1, epochs=args.epochs)),
        "point": lambda: train_point(data, TrainConfig.point(1, epochs=args.epochs)),
    }
    backends = available_backends()
    print(f"pool {args.pool}, {args.epochs} epochs, best of {args.repeats}; backends: {', '.join(backends)}")
    print(f"{'head':<12}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for head, fn in jobs.items():
        times, params = {}, {}
        for b in backends:
            set_backend(b)
            times[b], model = best_of(fn, args.repeats)
            params[b] = model.net.params
        row = f"{head:<12}" + "".join(f"{times[b]:>11.3f}s" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
            assert np.allclose(params["compiled"], params["python"], rtol=1e-8, atol=1e-10)
        print(row)


if __name__ == "__main__":
    main()
