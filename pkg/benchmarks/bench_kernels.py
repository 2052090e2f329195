"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per workload: best wall time per backend and the speed-up.
The first numba call is excluded (compilation is cached on disk afterwards).
"""

import argparse
import time

import numpy as np

from tmfuse import _backend, kernels
from tmfuse.model import ModelConfig, build_model, model_forward
from tmfuse.tensor import Tape, backward
from tmfuse import ops


def best_of(fn, repeat):
    fn()  # warm-up / JIT
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(rng):
    x = rng.standard_normal((32, 64, 200))
    w = rng.standard_normal((64, 64, 5))
    g = rng.standard_normal((32, 64, 200))
    feats = rng.standard_normal((80, 3000))
    batch = rng.standard_normal((32, 80, 200))
    tm = build_model(ModelConfig(channels=16, kernel=(5,), dilation=(1, 2), embedding_dim=128), seed=0)
    base = build_model(ModelConfig(l=80, tm_enabled=False, channels=64, kernel=(5,), dilation=(1, 2),
                                   embedding_dim=128), seed=0)
    probe = rng.standard_normal((32, 128))

    def train_step(model):
        with Tape() as tape:
            loss = ops.weighted_sum(model_forward(model, batch), probe)
        backward(tape, loss)

    return [
        ("conv1d forward 32x64x200 k5 d2", lambda: kernels.conv1d_forward(x, w, 2)),
        ("conv1d backward 32x64x200 k5 d2", lambda: kernels.conv1d_backward(x, w, g, 2)),
        ("moving average 32x64x200 w3", lambda: kernels.moving_average(x, 3)),
        ("sliding cmvn 80x3000 w300", lambda: kernels.sliding_mean_std(feats, 300)),
        ("TM model fwd+bwd batch 32", lambda: train_step(tm)),
        ("baseline fwd+bwd batch 32", lambda: train_step(base)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _backend.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print("workload\tnumpy_s\tnumba_s\tspeedup")
    for name, fn in workloads(rng):
        res = {}
        for backend in ("numpy", "numba"):
            _backend.set_backend(backend)
            res[backend] = best_of(fn, args.repeat)
        print(f"{name}\t{res['numpy']:.4g}\t{res['numba']:.4g}\t{res['numpy'] / res['numba']:.2f}x")


if __name__ == "__main__":
    main()
