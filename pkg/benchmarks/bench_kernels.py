"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--skip-train-step]

Kernel timings call both implementations in-process. The end-to-end train
step runs in two subprocesses, one per value of ``DEISTE_NUMBA``, since the
backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from deiste import _kernels

TRAIN_STEP = """
import time
from deiste import _kernels
from deiste.checks import synthetic_pairs
from deiste.model import Adagrad, TrainConfig, build_model, make_batch, train_step
data = synthetic_pairs(50, seed=0)
config = TrainConfig(hidden={hidden}, seed=0)
model = build_model(data, None, config)
opt = Adagrad(model.parameters(), config.learning_rate, config.adagrad_eps, model.frozen_rows())
batch = make_batch(data, model.vocab)
train_step(model, opt, batch)  # warm-up (and JIT compile)
best = float("inf")
for _ in range({repeat}):
    t = time.perf_counter()
    train_step(model, opt, batch)
    best = min(best, time.perf_counter() - t)
print(_kernels.backend(), best)
"""


def kernel_cases(rng):
    B, n, m, V, d = 50, 30, 30, 20000, 300
    # the kernels work on 2-D (rows, last axis) views, as the graph ops pass them
    x = rng.normal(size=(B * n, m))
    mask = rng.random((B * n, m)) > 0.2
    mask[:, 0] = True
    y = _kernels.masked_softmax_last_np(x, mask)
    idx = rng.integers(0, V, size=B * n)
    src = rng.normal(size=(B * n, d))
    emb = rng.normal(size=(V, d))
    rows = np.unique(idx)
    flat = rng.normal(size=d * d * 3)
    return {
        "masked_max_last": (x, mask),
        "masked_softmax_last": (x, mask),
        "softmax_backward": (y, rng.normal(size=y.shape)),
        "scatter_add_rows": (np.zeros((V, d)), idx, src),
        "adagrad_update": (flat.copy(), rng.normal(size=flat.size), np.ones(flat.size), 0.01, 1e-6),
        "adagrad_update_rows": (emb.copy(), rng.normal(size=emb.shape), np.ones(emb.shape), rows, 0.01, 1e-6),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    impls = {"numpy": _kernels.numpy_kernels(), "numba": _kernels.numba_kernels()}
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, args in cases.items():
        times = {}
        for label, table in impls.items():
            fn = table[name]
            fn(*args)  # warm-up (and JIT compile)
            times[label] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)) * 1e3
        print(f"{name:<22}{times['numpy']:>12.3f}{times['numba']:>12.3f}{times['numpy'] / times['numba']:>9.2f}x")


def bench_train_step(repeat, hidden):
    print(f"\nfull train step, batch of 50 pairs, d={hidden}")
    for flag in ("0", "1"):
        env = dict(os.environ, DEISTE_NUMBA=flag)
        code = TRAIN_STEP.format(hidden=hidden, repeat=repeat)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<8}{1e3 * float(seconds):10.1f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--hidden", type=int, default=300)
    parser.add_argument("--skip-train-step", action="store_true")
    args = parser.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_train_step:
        bench_train_step(args.repeat, args.hidden)


if __name__ == "__main__":
    main()
