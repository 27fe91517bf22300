"""Compare the numpy and compiled kernel backends.

Times the conv/pool primitives on the shapes the default model actually
produces (a training batch of 16 ten-frame sequences feeds 160 face crops
through the conv stack), then times a full forward+backward training step
per backend in a subprocess, since the model binds its backend at import.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --repeats 20
"""

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from addressee.nn.kernels import available_backends, get_backend

# (label, x shape, w shape): both conv stages of the default model under a
# batch of 16 sequences x 10 frames.
CONV_CASES = [
    ("conv 160x1x24x24 w8", (160, 1, 24, 24), (8, 1, 3, 3)),
    ("conv 160x8x11x11 w16", (160, 8, 11, 11), (16, 8, 3, 3)),
]
POOL_CASES = [
    ("pool 160x8x22x22", (160, 8, 22, 22)),
    ("pool 160x16x9x9", (160, 16, 9, 9)),
]


def best_of(fn, repeats):
    """Median of `repeats` timings, in milliseconds."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, xs, ws in CONV_CASES:
        x = rng.random(xs)
        w = rng.standard_normal(ws) * 0.1
        b = rng.standard_normal(ws[0]) * 0.1
        dy_shape = (xs[0], ws[0], xs[2] - 2, xs[3] - 2)
        dy = rng.standard_normal(dy_shape)
        row = {"case": label + " fwd"}
        for name in available_backends():
            k = get_backend(name)
            row[name] = best_of(lambda: k.conv2d_forward(x, w, b), repeats)
        rows.append(row)
        row = {"case": label + " bwd"}
        for name in available_backends():
            k = get_backend(name)
            row[name] = best_of(lambda: k.conv2d_backward(x, w, dy), repeats)
        rows.append(row)
    for label, xs in POOL_CASES:
        x = rng.random(xs)
        row = {"case": label + " fwd"}
        for name in available_backends():
            k = get_backend(name)
            row[name] = best_of(lambda: k.maxpool2_forward(x), repeats)
        rows.append(row)
        _, idx = get_backend("numpy").maxpool2_forward(x)
        dy = rng.standard_normal(idx.shape)
        row = {"case": label + " bwd"}
        for name in available_backends():
            k = get_backend(name)
            row[name] = best_of(
                lambda: k.maxpool2_backward(idx, dy, xs[2], xs[3]), repeats)
        rows.append(row)
    return rows


# Executed in a subprocess with ADDRESSEE_KERNELS set: time one full
# loss_and_grads step on a batch of 16 and print the median in ms.
_STEP_SNIPPET = """
import json, statistics, time
import numpy as np
from addressee.nn import Model, ModelConfig
cfg = ModelConfig()
model = Model.initialize(cfg, 0)
rng = np.random.default_rng(1)
faces = rng.random((16, 10, 24, 24))
poses = rng.standard_normal((16, 10, 54)) * 0.3
labels = rng.integers(0, 3, size=16)
model.loss_and_grads(faces, poses, labels)  # warm-up
times = []
for _ in range({repeats}):
    t0 = time.perf_counter()
    model.loss_and_grads(faces, poses, labels)
    times.append((time.perf_counter() - t0) * 1e3)
print(json.dumps(statistics.median(times)))
"""


def bench_model_step(repeats):
    row = {"case": "model step (batch 16) fwd+bwd"}
    for name in available_backends():
        env = dict(os.environ, ADDRESSEE_KERNELS=name)
        out = subprocess.run(
            [sys.executable, "-c", _STEP_SNIPPET.format(repeats=repeats)],
            capture_output=True, text=True, env=env, check=True)
        row[name] = json.loads(out.stdout)
    return [row]


def print_table(rows, backends):
    width = max(len(r["case"]) for r in rows)
    header = "case".ljust(width) + "".join(f"  {b:>10}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        line = r["case"].ljust(width)
        for b in backends:
            line += f"  {r[b]:>8.3f}ms"
        if len(backends) == 2:
            a, b = (r[backends[0]], r[backends[1]])
            line += f"  {a / b:>7.2f}x"
        print(line)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=30,
                        help="timings per case; the median is reported")
    parser.add_argument("--skip-model-step", action="store_true",
                        help="kernel microbenchmarks only")
    args = parser.parse_args(argv)

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    rows = bench_kernels(args.repeats)
    if not args.skip_model_step:
        rows += bench_model_step(max(5, args.repeats // 3))
    print_table(rows, backends)
    if len(backends) < 2:
        print("\ncompiled extension not built; showing numpy only")
    return 0


if __name__ == "__main__":
    sys.exit(main())
