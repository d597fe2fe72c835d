"""Numba kernels vs the numpy fallback.

Times each hot kernel on both backends at a few sizes, then times one
training epoch end to end in two subprocesses (one with GRCN_DISABLE_NUMBA=1).

    python3 benchmarks/bench_kernels.py [--sizes 10000,200000] [--repeat 5] [--skip-epoch]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from grcn import _accel

EPOCH_SNIPPET = """
import time
from grcn import _accel, gcn, synth, train, rng
from grcn.graph import split_per_user
spec = synth.SynthSpec(num_users={users}, num_items={items}, interactions_per_user=20, seed=0)
data = synth.generate(spec)
graph = split_per_user(data.graph, seed=rng.stream(0, "split"))
hyper = gcn.Hyperparams(modalities=("visual", "acoustic"), max_epochs=1)
train.fit(graph, data.features, hyper, seed=0)  # warm-up and JIT compile
t0 = time.perf_counter()
train.fit(graph, data.features, hyper.with_updates(max_epochs=3, patience=3), seed=0)
print(_accel.backend_name(), (time.perf_counter() - t0) / 3)
"""


def kernel_cases(n_edges, rng):
    n_nodes = max(n_edges // 20, 1)
    index = np.sort(rng.integers(0, n_nodes, n_edges))
    logits = rng.standard_normal(n_edges)
    rows = rng.standard_normal((n_edges, 64))
    probs = _accel.numpy_impl.segment_softmax(logits, index, n_nodes)
    grad = rng.standard_normal(n_edges)
    n_users = max(int(np.sqrt(n_edges)), 1)
    scores = rng.standard_normal((n_users, n_edges // n_users))
    mask = rng.random(scores.shape) < 0.9
    return {
        "scatter_add[64]": lambda impl: impl.scatter_add(rows, index, n_nodes),
        "segment_softmax": lambda impl: impl.segment_softmax(logits, index, n_nodes),
        "segment_softmax_grad": lambda impl: impl.segment_softmax_grad(probs, grad, index, n_nodes),
        "topk_masked(k=10)": lambda impl: impl.topk_masked(scores, mask, 10),
    }


def bench_kernels(sizes, repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'edges':>10}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in sizes:
        for name, fn in kernel_cases(n, rng).items():
            fn(_accel.numba_impl)  # compile outside the timed region
            t_np = min(timeit.repeat(lambda: fn(_accel.numpy_impl), number=1, repeat=repeat))
            t_nb = min(timeit.repeat(lambda: fn(_accel.numba_impl), number=1, repeat=repeat))
            print(f"{name:<22}{n:>10}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


def bench_epoch(users, items):
    print(f"\nepoch time, {users} users x {items} items:")
    for disabled in ("0", "1"):
        env = dict(os.environ, GRCN_DISABLE_NUMBA=disabled)
        code = EPOCH_SNIPPET.format(users=users, items=items)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<6} {float(seconds):.3f} s/epoch")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="10000,200000", help="comma-separated edge counts")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--epoch-users", type=int, default=600)
    parser.add_argument("--epoch-items", type=int, default=1200)
    parser.add_argument("--skip-epoch", action="store_true")
    args = parser.parse_args(argv)
    if not _accel.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    bench_kernels([int(s) for s in args.sizes.split(",")], args.repeat)
    if not args.skip_epoch:
        bench_epoch(args.epoch_users, args.epoch_items)


if __name__ == "__main__":
    main()
