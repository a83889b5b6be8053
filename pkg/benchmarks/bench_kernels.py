"""Compare the compiled kernel backend against the numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--batch 32] [--repeats 5]

Times the four hot kernels in isolation and a full paper-cnn
forward/backward pass under each backend. The pass section works by
forcing the backend through CYCLEFED_KERNELS in a subprocess, since the
nn layers bind the selected backend at import.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from cyclefed.kernels import get_backend


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(batch, repeats):
    rng = np.random.default_rng(0)
    x = rng.random((batch, 28, 28, 32), dtype=np.float32)
    rows = []
    for name in ("compiled", "numpy"):
        try:
            backend = get_backend(name)
        except ImportError:
            print(f"  {name}: unavailable, skipping")
            continue
        cols = backend.im2col(x, 3, 3)
        pooled, idx = backend.maxpool2x2_forward(x)
        timings = {
            "im2col": time_call(lambda: backend.im2col(x, 3, 3), repeats),
            "col2im": time_call(lambda: backend.col2im(cols, x.shape, 3, 3), repeats),
            "maxpool_fwd": time_call(lambda: backend.maxpool2x2_forward(x), repeats),
            "maxpool_bwd": time_call(
                lambda: backend.maxpool2x2_backward(pooled, idx, x.shape), repeats),
        }
        rows.append((name, timings))
    return rows


_PASS_SNIPPET = """
import json, time
import numpy as np
from cyclefed.nn import backward, build_model
model = build_model("paper-cnn", 0)
rng = np.random.default_rng(1)
x = rng.random(({batch}, 28, 28, 1)).astype(np.float32)
y = rng.integers(0, 10, size={batch})
backward(model, x, y, dropout_seed=7)  # warm up
best = float("inf")
for _ in range({repeats}):
    t0 = time.perf_counter()
    backward(model, x, y, dropout_seed=7)
    best = min(best, time.perf_counter() - t0)
from cyclefed.kernels import BACKEND
print(json.dumps({{"backend": BACKEND, "seconds": best}}))
"""


def bench_pass(batch, repeats):
    rows = []
    for name in ("compiled", "numpy"):
        env = dict(os.environ, CYCLEFED_KERNELS=name)
        proc = subprocess.run(
            [sys.executable, "-c", _PASS_SNIPPET.format(batch=batch, repeats=repeats)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            print(f"  {name}: unavailable ({proc.stderr.strip().splitlines()[-1]})")
            continue
        rows.append(json.loads(proc.stdout))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"kernels on (batch={args.batch}, 28x28x32), best of {args.repeats}:")
    rows = bench_kernels(args.batch, args.repeats)
    for name, timings in rows:
        line = "  ".join(f"{k} {v * 1e3:7.2f}ms" for k, v in timings.items())
        print(f"  {name:8s} {line}")
    if len(rows) == 2:
        for key in rows[0][1]:
            ratio = rows[1][1][key] / rows[0][1][key]
            print(f"  speedup {key}: {ratio:.2f}x")

    print(f"\npaper-cnn forward+backward (batch={args.batch}):")
    passes = bench_pass(args.batch, args.repeats)
    for row in passes:
        print(f"  {row['backend']:8s} {row['seconds'] * 1e3:8.2f}ms")
    if len(passes) == 2:
        print(f"  speedup: {passes[1]['seconds'] / passes[0]['seconds']:.2f}x")


if __name__ == "__main__":
    main()
