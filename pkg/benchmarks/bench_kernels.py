"""Compare the compiled kernels against the numpy fallback.

Checks both backends agree bit for bit, then times each kernel and one
end-to-end training run per backend (each in a fresh interpreter so the
import-time backend switch applies).

    python benchmarks/bench_kernels.py [--nodes 2000] [--width 64] [--repeat 20]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from gnsde.datasets import gen_voting
from gnsde.graph import normalize
from gnsde._kernels import _pykernels

try:
    from gnsde._kernels import _ckernels
except ImportError:
    _ckernels = None

E2E = """
import time
from gnsde import BACKEND, GraphModel, ModelConfig, Task, TimeGrid, Tensor, normalize, train
from gnsde.datasets import gen_voting
d = gen_voting({n}, 0.5, seed=0)
grid = TimeGrid(0, 1, 20)
m = GraphModel(ModelConfig(2, 3, kind="gnsde"))
t = time.perf_counter()
train(m, Tensor(d.features), normalize(d.graph), Task.static(grid, d.labels, d.train_mask), grid, epochs={epochs})
print(BACKEND, time.perf_counter() - t)
"""


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10, help="epochs for the end-to-end run (0 skips it)")
    args = ap.parse_args()

    if _ckernels is None:
        print("compiled extension not built; nothing to compare (pip install -e . --no-build-isolation)")
        return 1
    adj = normalize(gen_voting(args.nodes, 0.5, seed=0).graph)
    x = np.random.default_rng(0).standard_normal((args.nodes, args.width))
    csr = (adj.indptr, adj.indices, adj.values, x)
    count = args.nodes * args.width
    seed, start = np.uint64(7), np.uint64(0)

    a, b = _ckernels.csr_matmul(*csr), _pykernels.csr_matmul(*csr)
    assert a.tobytes() == b.tobytes(), "csr_matmul backends disagree"
    a, b = _ckernels.counter_bits(seed, start, count), _pykernels.counter_bits(seed, start, count)
    assert a.tobytes() == b.tobytes(), "counter_bits backends disagree"
    print(f"backends agree bitwise (n={args.nodes}, width={args.width}, nnz={adj.values.size})")

    print(f"{'kernel':<14}{'cython ms':>12}{'python ms':>12}{'speedup':>10}")
    for name, cfn, pfn, fargs in (
        ("csr_matmul", _ckernels.csr_matmul, _pykernels.csr_matmul, csr),
        ("counter_bits", _ckernels.counter_bits, _pykernels.counter_bits, (seed, start, count)),
    ):
        tc = best_of(lambda: cfn(*fargs), args.repeat)
        tp = best_of(lambda: pfn(*fargs), args.repeat)
        print(f"{name:<14}{tc * 1e3:>12.3f}{tp * 1e3:>12.3f}{tp / tc:>9.1f}x")

    if args.epochs:
        code = E2E.format(n=min(args.nodes, 300), epochs=args.epochs)
        for flag in ("0", "1"):
            env = dict(os.environ, GNSDE_PURE_PYTHON=flag)
            res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
            backend, secs = res.stdout.split()
            print(f"train {args.epochs} epochs, backend={backend}: {float(secs):.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
