#!/usr/bin/env python3
"""Benchmark the compiled conv kernels against the NumPy fallback.

Runs each backend on a sweep of shapes (training-sized through large) and
reports forward/backward timings plus the end-to-end effect on one training
step of the full model.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from cdformer.autodiff.kernels import _conv_np

try:
    from cdformer.autodiff.kernels import _conv_cy
except ImportError:
    _conv_cy = None

SHAPES = [
    # (batch, c_in, l_in, c_out, kernel, label)
    (32, 4, 16, 8, 3, "training batch (default config)"),
    (32, 32, 16, 32, 3, "wide channels, short window"),
    (32, 8, 128, 16, 5, "long window"),
    (256, 16, 64, 32, 3, "large batch"),
]


def _time(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_shape(shape, repeats):
    n, c_in, l_in, c_out, k, label = shape
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c_in, l_in))
    w = rng.normal(size=(c_out, c_in, k))
    b = rng.normal(size=c_out)
    l_out = l_in - k + 1
    gy = rng.normal(size=(n, c_out, l_out))

    rows = []
    backends = [("numpy", _conv_np)]
    if _conv_cy is not None:
        backends.append(("compiled", _conv_cy))
    for name, mod in backends:
        fwd = _time(lambda: mod.conv1d_forward(x, w, b, 1, 0), repeats)
        bwd = _time(lambda: mod.conv1d_backward(x, w, 1, 0, gy), repeats)
        rows.append((name, fwd, bwd))
    print(f"\n{label}: x={x.shape} w={w.shape}")
    base_fwd, base_bwd = rows[0][1], rows[0][2]
    for name, fwd, bwd in rows:
        print(f"  {name:9s} forward {fwd * 1e6:9.1f} us ({base_fwd / fwd:4.2f}x)   "
              f"backward {bwd * 1e6:9.1f} us ({base_bwd / bwd:4.2f}x)")


def bench_train_step(repeats):
    import os
    from cdformer.autodiff import Tape, Tensor, kernels
    from cdformer.model import ModelConfig, build_variant
    from cdformer.train import Adam, huber_loss

    cfg = ModelConfig(input_channels=4, window_len=16, cnn_channels=8,
                      drsn_blocks=1, d_model=16, heads=2, d_ff=32,
                      encoder_layers=1, reg_hidden=16, variant="cdformer")
    model = build_variant(cfg, seed=0)
    model.set_training(True)
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (32, 4, 16))
    y = rng.uniform(0, 1, 32)
    optimizer = Adam(model.named_parameters(), lr=1e-3)

    def step():
        with Tape() as tape:
            loss = huber_loss(model.forward(Tensor(x)), Tensor(y), 1.0)
            tape.backward(loss)
        optimizer.step()
        optimizer.zero_grad()

    elapsed = _time(step, repeats)
    print(f"\nfull training step (batch 32, backend={kernels.backend_name()}): "
          f"{elapsed * 1e3:.2f} ms")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    if _conv_cy is None:
        print("compiled kernels not built; timing the NumPy fallback only")
    for shape in SHAPES:
        bench_shape(shape, args.repeats)
    bench_train_step(max(5, args.repeats // 5))


if __name__ == "__main__":
    main()
