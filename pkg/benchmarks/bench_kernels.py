"""Compiled kernels against their numpy fallbacks.

Both variants live side by side in the library, so one process can time
them directly. The last section times a full training step under each
backend in a subprocess, since the backend is fixed at import time.

    python benchmarks/bench_kernels.py [--quick]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from prcurves import kernels
from prcurves._accel import tune_allocator
from prcurves.nn import ops


def best_of(fn, repeat=5, number=1):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        times.append((time.perf_counter() - t0) / number)
    return min(times)


def row(name, t_nb, t_np):
    print(f"{name:<28} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:8.2f}x")


def bench_metrics(scale):
    rng = np.random.default_rng(0)
    n = 10**6 * scale
    p = rng.random(n)
    p /= p.sum()
    q = rng.random(n)
    q /= q.sum()
    lams = np.geomspace(0.01, 100, 16)
    row("pr_sums (n=%.0e, 16 lam)" % n,
        best_of(lambda: kernels.pr_sums_nb(p, q, lams, 8)),
        best_of(lambda: kernels.pr_sums_np(p, q, lams, 8)))

    V, L = 8, 6
    tables = [rng.dirichlet(np.ones(V), size=V**d) for d in range(L)]
    row("joint_from_tables (8^6)",
        best_of(lambda: kernels.joint_from_tables_nb(tables)),
        best_of(lambda: kernels.joint_from_tables_np(tables)))

    x = rng.standard_normal((2000 * scale, 16))
    y = rng.standard_normal((2000 * scale, 16))
    row("kth_nn_sqdist (k=4)",
        best_of(lambda: kernels.kth_nn_sqdist_nb(x, 4), repeat=3),
        best_of(lambda: kernels.kth_nn_sqdist_np(x, 4), repeat=3))
    radii = kernels.kth_nn_sqdist_np(x, 4)
    row("in_any_ball",
        best_of(lambda: kernels.in_any_ball_nb(y, x, radii), repeat=3),
        best_of(lambda: kernels.in_any_ball_np(y, x, radii), repeat=3))

    probs = rng.dirichlet(np.ones(12), size=200000)
    row("cover_counts (2e5 x 12)",
        best_of(lambda: kernels.cover_counts_nb(probs, 0.9)),
        best_of(lambda: kernels.cover_counts_np(probs, 0.9)))


def bench_ops():
    rng = np.random.default_rng(0)
    B, T, d, H, f = 512, 8, 32, 4, 128
    n = B * T
    x = rng.standard_normal((n, d)).astype(np.float32)
    g = np.ones(d, np.float32)
    row("rms_fwd", best_of(lambda: ops.rms_fwd_nb(x, g), number=20),
        best_of(lambda: ops.rms_fwd_np(x, g), number=20))
    _, xhat, inv = ops.rms_fwd_np(x, g)
    row("rms_bwd", best_of(lambda: ops.rms_bwd_nb(x, g, xhat, inv), number=20),
        best_of(lambda: ops.rms_bwd_np(x, g, xhat, inv), number=20))

    z = rng.standard_normal((n, 2 * f)).astype(np.float32)
    row("swiglu_fwd", best_of(lambda: ops.swiglu_fwd_nb(z), number=20),
        best_of(lambda: ops.swiglu_fwd_np(z), number=20))
    hid, sig = ops.swiglu_fwd_np(z)
    row("swiglu_bwd", best_of(lambda: ops.swiglu_bwd_nb(hid, z, sig), number=20),
        best_of(lambda: ops.swiglu_bwd_np(hid, z, sig), number=20))

    from prcurves.nn.model import rope_tables

    cos, sin = rope_tables(T, d // H, np.float32)
    qkv = rng.standard_normal((n, 3 * d)).astype(np.float32)
    row("attn_fwd", best_of(lambda: ops.attn_fwd_nb(qkv, B, T, H, cos, sin, True), number=10),
        best_of(lambda: ops.attn_fwd_np(qkv, B, T, H, cos, sin, True), number=10))
    do = rng.standard_normal((n, d)).astype(np.float32)
    c_nb = ops.attn_fwd_nb(qkv, B, T, H, cos, sin, True)[1]
    c_np = ops.attn_fwd_np(qkv, B, T, H, cos, sin, True)[1]
    row("attn_bwd", best_of(lambda: ops.attn_bwd_nb(do, c_nb, B, T, H, cos, sin, True), number=10),
        best_of(lambda: ops.attn_bwd_np(do, c_np, B, T, H, cos, sin, True), number=10))


STEP_SCRIPT = """
import time, numpy as np
from prcurves._accel import tune_allocator, backend_name
from prcurves.nn.model import ModelConfig, init_params, loss_and_grads
tune_allocator()
cfg = ModelConfig(12, 8)
p = init_params(cfg)
rng = np.random.default_rng(0)
tok = rng.integers(0, 12, (512, 8))
w = np.ones((512, 8), np.float32)
for _ in range(3):
    loss_and_grads(p, cfg, tok, w)
best = 1e9
for _ in range(5):
    t0 = time.perf_counter()
    for _ in range(5):
        loss_and_grads(p, cfg, tok, w)
    best = min(best, (time.perf_counter() - t0) / 5)
print(best)
"""


def bench_step():
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, PRCURVES_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", STEP_SCRIPT], env=env, capture_output=True, text=True, check=True)
        out[flag] = float(res.stdout.strip().splitlines()[-1])
    row("train step (B=512, full model)", out["0"], out["1"])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes, skip the step benchmark")
    args = ap.parse_args()
    tune_allocator()
    print(f"{'kernel':<28} {'numba ms':>10} {'numpy ms':>10} {'speedup':>9}")
    bench_metrics(1)
    bench_ops()
    if not args.quick:
        bench_step()


if __name__ == "__main__":
    main()
