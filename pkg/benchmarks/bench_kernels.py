"""Compiled-vs-numpy kernel benchmark.

Times the three hot kernels under both backends on simulator-realistic
shapes, checks they agree numerically, then times a short end-to-end run
under each backend (separate subprocesses, since the backend is an
import-time choice).

    python3 benchmarks/bench_kernels.py [--repeats N] [--skip-e2e]
"""
import argparse
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from fedtier import _backend, kernels_py

try:
    from fedtier import _kernels
except ImportError:
    _kernels = None

# (batch, in, out): selection scoring, classifier training, AP full model
SHAPES = [(64, 32, 64), (64, 64, 64), (64, 64, 10), (256, 64, 10), (512, 32, 64)]


def time_call(fn, args, repeats):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best.append(time.perf_counter() - t0)
    return statistics.median(best)


def bench_backend(mod, repeats):
    rng = np.random.default_rng(0)
    out = {}
    for shape in SHAPES:
        n, din, dout = shape
        x = rng.normal(size=(n, din))
        w = rng.normal(size=(din, dout))
        b = rng.normal(size=dout)
        act = kernels_py.dense_forward(x, w, b, True)
        gout = rng.normal(size=(n, dout))
        logits = rng.normal(size=(n, dout))
        labels = rng.integers(0, dout, size=n)
        out[shape] = (
            time_call(mod.dense_forward, (x, w, b, True), repeats),
            time_call(mod.dense_backward, (x, w, act, gout, True), repeats),
            time_call(mod.softmax_xent, (logits, labels), repeats),
        )
    return out


def check_agreement():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=(33, 17))
        w = rng.normal(size=(17, 9))
        b = rng.normal(size=9)
        for relu in (False, True):
            a = _kernels.dense_forward(x, w, b, relu)
            c = kernels_py.dense_forward(x, w, b, relu)
            worst = max(worst, float(np.abs(a - c).max()))
            gout = rng.normal(size=a.shape)
            for ga, gc in zip(_kernels.dense_backward(x, w, a, gout, relu),
                              kernels_py.dense_backward(x, w, a, gout, relu)):
                worst = max(worst, float(np.abs(ga - gc).max()))
        labels = rng.integers(0, 9, size=33)
        la, da = _kernels.softmax_xent(x @ w, labels)
        lc, dc = kernels_py.softmax_xent(x @ w, labels)
        worst = max(worst, float(np.abs(la - lc).max()), float(np.abs(da - dc).max()))
    return worst


E2E_CODE = """
import time
from fedtier import BACKEND
from fedtier.config import ExperimentConfig
from fedtier.sim import run
cfg = ExperimentConfig()
cfg.federation.rounds = 20
t0 = time.perf_counter()
res = run(cfg, "partitioned", 0)
print(f"{BACKEND} {time.perf_counter() - t0:.2f}s final_acc={res.final_accuracy:.3f}")
"""


def bench_end_to_end():
    for backend in ("compiled", "python"):
        env = dict(os.environ, FEDTIER_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", E2E_CODE],
                              capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(f"  {backend}: failed ({proc.stderr.strip().splitlines()[-1]})")
        else:
            print(f"  {proc.stdout.strip()}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200,
                        help="timing repetitions per kernel (median taken)")
    parser.add_argument("--skip-e2e", action="store_true",
                        help="skip the end-to-end simulator comparison")
    args = parser.parse_args()

    print(f"active backend: {_backend.BACKEND}")
    if _kernels is None:
        print("compiled extension not built; nothing to compare")
        return 1

    worst = check_agreement()
    print(f"backend agreement: max abs deviation {worst:.2e} over 50 random cases")

    py = bench_backend(kernels_py, args.repeats)
    cy = bench_backend(_kernels, args.repeats)
    header = (f"{'shape (n,in,out)':<18}{'kernel':<16}"
              f"{'python us':>11}{'compiled us':>13}{'speedup':>9}")
    print(header)
    print("-" * len(header))
    for shape in SHAPES:
        for i, name in enumerate(("dense_forward", "dense_backward", "softmax_xent")):
            p, c = py[shape][i] * 1e6, cy[shape][i] * 1e6
            print(f"{str(shape):<18}{name:<16}{p:>11.1f}{c:>13.1f}{p / c:>9.2f}x")

    if not args.skip_e2e:
        print("end-to-end (20 rounds, partitioned, seed 0):")
        bench_end_to_end()
    return 0


if __name__ == "__main__":
    sys.exit(main())
