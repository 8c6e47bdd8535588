#!/usr/bin/env python3
"""Benchmark the compiled kernel extension against the numpy fallback.

Covers the isolated hot kernels (im2col / col2im / maxpool / PRNG fills)
and two end-to-end composites (conv2d forward+backward, one classifier
training step). Run from the repo root:

    python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import satl._kernels_py as kpy

try:
    import satl._kernels as kext
except ImportError:
    kext = None


def timeit(fn, repeats):
    fn()  # warm
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def bench_pair(name, make_fn, repeats, rows):
    t_py = timeit(make_fn(kpy), repeats)
    if kext is not None:
        t_ext = timeit(make_fn(kext), repeats)
        rows.append((name, t_py, t_ext, t_py / t_ext))
    else:
        rows.append((name, t_py, float("nan"), float("nan")))


def kernel_benches(repeats, rows):
    rng = np.random.default_rng(0)
    xp = np.ascontiguousarray(rng.standard_normal((16, 16, 66, 66)).astype(np.float32))
    cols = kpy.im2col(xp, 3, 3, 1)

    bench_pair("im2col 16x16x66x66 k3 s1", lambda k: lambda: k.im2col(xp, 3, 3, 1), repeats, rows)
    bench_pair(
        "col2im 16x16x66x66 k3 s1",
        lambda k: lambda: k.col2im(cols, 16, 16, 66, 66, 3, 3, 1),
        repeats,
        rows,
    )

    x = np.ascontiguousarray(rng.standard_normal((16, 32, 32, 32)).astype(np.float32))
    out, idx = kpy.maxpool2_forward(x)
    g = np.ascontiguousarray(rng.standard_normal(out.shape).astype(np.float32))
    bench_pair("maxpool2 fwd 16x32x32x32", lambda k: lambda: k.maxpool2_forward(x), repeats, rows)
    bench_pair(
        "maxpool2 bwd 16x32x32x32", lambda k: lambda: k.maxpool2_backward(g, idx), repeats, rows
    )

    u = np.empty(1 << 16)

    def uniform_fn(k):
        def run():
            state = np.array([1, 2, 3, 4], dtype=np.uint64)
            k.prng_fill_uniform(state, u, False)

        return run

    def normal_fn(k):
        def run():
            state = np.array([1, 2, 3, 4], dtype=np.uint64)
            k.prng_fill_normal(state, u)

        return run

    bench_pair("prng uniform 65536", uniform_fn, repeats, rows)
    bench_pair("prng normal 65536", normal_fn, repeats, rows)


def composite_benches(repeats, rows):
    """conv2d forward+backward and a full training step, per backend."""
    import subprocess
    import sys

    script = r"""
import time, numpy as np
from satl import STYLE_PRESETS, generate_synthetic, build_classifier, EncoderConfig
from satl.engine.prng import Prng
from satl.engine import tensor as T
from satl.engine import conv2d, Tensor
from satl.losses import cross_entropy
from satl.pipeline import SgdMomentum
from satl.data import batches

x = Tensor(np.random.default_rng(0).standard_normal((16, 16, 64, 64)).astype(np.float32), requires_grad=True)
w = Tensor(np.random.default_rng(1).standard_normal((16, 16, 3, 3)).astype(np.float32) * 0.05, requires_grad=True)
b = Tensor(np.zeros(16, dtype=np.float32), requires_grad=True)

def conv_fb():
    T.zero_grads([x, w, b])
    out = conv2d(x, w, b, padding=1)
    T.backward(T.reduce_mean(T.square(out)))

conv_fb()
best = min(
    (lambda t0=time.perf_counter(): (conv_fb(), time.perf_counter() - t0)[1])()
    for _ in range(REPEATS)
)
print("conv_fb", best * 1000)

ds = generate_synthetic(16, 0.5, STYLE_PRESETS["source"][0], prng=Prng(3))
model = build_classifier(EncoderConfig(), Prng(4))
opt = SgdMomentum([(model.params, 1e-3)], weight_decay=5e-4)

def step():
    for batch in batches(ds, 16):
        opt.zero_grad()
        T.backward(cross_entropy(model.forward(batch.x), batch.labels))
        opt.step()

step()
best = min(
    (lambda t0=time.perf_counter(): (step(), time.perf_counter() - t0)[1])()
    for _ in range(REPEATS)
)
print("train_step", best * 1000)
"""
    results = {}
    for backend in ("python", "ext"):
        if backend == "ext" and kext is None:
            continue
        out = subprocess.run(
            [sys.executable, "-c", script.replace("REPEATS", str(repeats))],
            capture_output=True,
            text=True,
            env={"PATH": "/usr/bin:/bin", "SATL_BACKEND": backend},
        )
        if out.returncode != 0:
            raise RuntimeError(out.stderr)
        for line in out.stdout.splitlines():
            name, ms = line.split()
            results.setdefault(name, {})[backend] = float(ms)
    for name, vals in results.items():
        t_py = vals.get("python", float("nan"))
        t_ext = vals.get("ext", float("nan"))
        rows.append((f"{name} (end-to-end, batch 16)", t_py, t_ext, t_py / t_ext))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if kext is None:
        print("note: compiled extension unavailable; showing fallback timings only\n")

    rows = []
    kernel_benches(args.repeats, rows)
    composite_benches(args.repeats, rows)

    width = max(len(r[0]) for r in rows) + 2
    print(f"{'kernel':<{width}} {'python ms':>10} {'ext ms':>10} {'speedup':>8}")
    for name, t_py, t_ext, speedup in rows:
        print(f"{name:<{width}} {t_py:>10.3f} {t_ext:>10.3f} {speedup:>7.2f}x")


if __name__ == "__main__":
    main()
