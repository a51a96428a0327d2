"""Time the compiled kernels against the numpy fallback on classifier-sized inputs.

    python benchmarks/bench_kernels.py [--repeats N] [--dtype float32|float64] [--end-to-end]

``--end-to-end`` also times one descent step of the classifier (batch 32) under
each backend, selected per subprocess through ``ADVST_KERNELS``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from advst._kernels import _reference, native_available


def cases(dtype, rng):
    x1 = rng.uniform(size=(32, 3, 32, 32)).astype(dtype)
    x2 = rng.uniform(size=(32, 64, 14, 14)).astype(dtype)
    cols2 = _reference.im2col(x2, 5)
    pool_in = rng.normal(size=(32, 64, 28, 28)).astype(dtype)
    pooled, idx = _reference.maxpool2_forward(pool_in)
    img = rng.uniform(size=(32, 3, 32, 32)).astype(dtype)
    grid = rng.uniform(-1, 1, size=(32, 32, 32, 2)).astype(dtype)
    g_img = rng.normal(size=img.shape).astype(dtype)
    return [
        ("im2col conv1", lambda k: k.im2col(x1, 5)),
        ("im2col conv2", lambda k: k.im2col(x2, 5)),
        ("col2im conv2", lambda k: k.col2im(cols2, x2.shape, 5)),
        ("maxpool2 forward", lambda k: k.maxpool2_forward(pool_in)),
        ("maxpool2 backward", lambda k: k.maxpool2_backward(pooled, idx, pool_in.shape)),
        ("grid_sample forward", lambda k: k.grid_sample_forward(img, grid)),
        ("grid_sample backward", lambda k: k.grid_sample_backward(g_img, img, grid, True, True)),
    ]


STEP_SCRIPT = """
import timeit, numpy as np
from advst._kernels import BACKEND
from advst.classifier import init_model
from advst.data import synth_digits
from advst.trainer import DomainPool, Optimizer, TrainConfig, minimize_epoch
src = synth_digits(4, 0)
model = init_model(10, np.random.default_rng(0))
cfg = TrainConfig(batch_size=32)
pool = DomainPool(src, 0)
rng = np.random.default_rng(0)
opt = Optimizer("adam")
step = lambda: minimize_epoch(model, pool, cfg, rng, 1e-4, opt, n_batches=1)
print(BACKEND, min(timeit.repeat(step, number=1, repeat=%d)))
"""


def end_to_end(repeats):
    for backend in ("python", "native"):
        env = dict(os.environ, ADVST_KERNELS=backend)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT % repeats], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"{'descent step (' + out[0] + ')':<22} {float(out[1]) * 1e3:>10.1f} ms")


def best_of(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--dtype", default="float32", choices=["float32", "float64"])
    parser.add_argument("--end-to-end", action="store_true")
    args = parser.parse_args(argv)
    if not native_available():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from advst._kernels import _native

    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'numpy ms':>10} {'native ms':>10} {'speedup':>8}")
    for name, run in cases(np.dtype(args.dtype), rng):
        ref = best_of(lambda: run(_reference), args.repeats)
        nat = best_of(lambda: run(_native), args.repeats)
        print(f"{name:<22} {ref * 1e3:>10.2f} {nat * 1e3:>10.2f} {ref / nat:>7.1f}x")
    if args.end_to_end:
        end_to_end(args.repeats)


if __name__ == "__main__":
    main()
