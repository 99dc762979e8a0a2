"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The numba timings exclude compilation (one warm-up call per kernel).
"""
import argparse
import time

import numpy as np

from binode import kernels
from binode.model import build_lv_binode, build_ultradian_binode
from binode.nnp import NnpSpec, init
from binode.ratelaws import TARGETS, sample_dataset
from binode.refmodels import generate_training_set
from binode.training import sample_segments


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    X, y = sample_dataset(TARGETS["bisubstrate_mm"], (0, 0), (2, 2), 5000, 0)
    for L, W in ((1, 1), (3, 4), (7, 7)):
        net = init(NnpSpec((True, True), L, W, "elu", "identity"), 0)
        arch, mono = net.arch_row(), net.mono_flags()
        yield f"mlp_loss_grad {L}x{W}, N=5000", lambda b, t=net.params, a=arch, mo=mono: \
            b.mlp_loss_grad(t, a, mo, X, y)

    for name, model, m, B, H in (("lv", build_lv_binode(seed=0), 1, 40, 10),
                                 ("ultradian", build_ultradian_binode(seed=0), 10, 15, 5)):
        data = generate_training_set(name)
        segs = sample_segments(data, B, H, seed=0)
        pk = model.pack()
        dt = data[0].spacing / m
        yield f"rollout_loss_grad {name}, B={B}, H={H}, m={m}", lambda b, pk=pk, s=segs, m=m, dt=dt: \
            b.rollout_loss_grad(*pk, s.x0, s.t0, s.targets, m, dt)
        Xs = np.concatenate([tr.states for tr in data])
        yield f"field {name}, {len(Xs)} states", lambda b, pk=pk, Xs=Xs: b.field(*pk, Xs, 0.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    nb, npb = kernels.get_backend("numba"), kernels.get_backend("numpy")
    print(f"{'kernel':48s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, fn in cases():
        a = best_of(lambda: fn(nb), args.repeat)
        b = best_of(lambda: fn(npb), args.repeat)
        print(f"{label:48s} {1e3 * a:10.3f} {1e3 * b:10.3f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
