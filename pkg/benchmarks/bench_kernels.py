"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--train-steps 30]
"""
import argparse
import time
import timeit

import numpy as np

from advae import kernels
from advae.training import TrainConfig, init_state, train_step, training_data


def kernel_cases(rng):
    p = rng.standard_normal(100_000)
    g = rng.standard_normal(100_000)
    m, v = np.zeros_like(p), np.zeros_like(p)
    h = rng.standard_normal((128, 128))
    gh = rng.standard_normal((128, 128))
    x, y = rng.standard_normal((2000, 2)), rng.standard_normal((2000, 2))
    centers = rng.standard_normal((8, 2))
    return {
        "adam_update n=1e5": lambda: kernels.adam_update(p, g, m, v, 1e-4, 0.5, 0.999, 1e-8, 0.5, 0.001),
        "relu_forward 128x128": lambda: kernels.relu_forward(h),
        "relu_backward 128x128": lambda: kernels.relu_backward(gh, h),
        "rbf_kernel_sums 2000x2": lambda: kernels.rbf_kernel_sums(x, y, 0.5),
        "nearest_center 2000x8": lambda: kernels.nearest_center(x, centers),
    }


def time_kernels(repeat):
    out = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        for name, fn in kernel_cases(np.random.default_rng(0)).items():
            number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
            best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
            out[(name, backend)] = best
    return out


def time_training(steps, variant):
    out = {}
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        config = TrainConfig(variant=variant, total_steps=steps, seed=0)
        s = init_state(config)
        data = training_data(config)
        batches = [data[s.rng.integers(0, len(data), config.batch_size)] for _ in range(steps)]
        train_step(s, batches[0])  # warm-up
        t = time.perf_counter()
        for b in batches[1:]:
            train_step(s, b)
        out[(f"train_step {variant}", backend)] = (time.perf_counter() - t) / (steps - 1)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train-steps", type=int, default=30)
    args = ap.parse_args(argv)
    start = kernels.backend_name()
    results = time_kernels(args.repeat)
    for variant in ("gaussian", "full"):
        results.update(time_training(args.train_steps, variant))
    kernels.use_backend(start)

    names = list(dict.fromkeys(name for name, _ in results))
    backends = kernels.available_backends()
    print(f"{'case':28s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name in names:
        row = [results[(name, b)] for b in backends]
        line = f"{name:28s}" + "".join(f"{t * 1e6:12.1f}us" for t in row)
        if len(backends) == 2:
            line += f"   {results[(name, 'python')] / results[(name, 'compiled')]:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()
