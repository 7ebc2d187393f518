"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is first run once to trigger compilation, then timed on inputs
sized like a full-size 1D-Burgers objective evaluation.  Outputs of the two
backends are compared as a sanity check.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from gcnffnn import kernels
from gcnffnn.domain import GridSpec, build_grid_graph, normalize_adjacency
from gcnffnn.oracles import _hermite_rule, BURGERS_NU


def cases(rng):
    spec = GridSpec((("x", -1.0, 1.0, 256), ("t", 0.0, 0.99, 100)))
    M = normalize_adjacency(build_grid_graph(spec), spec.N)
    X = rng.normal(size=(spec.N, 12))
    Z = rng.normal(size=(4, spec.N, 20))
    G = rng.normal(size=Z.shape)
    src = np.array([1], dtype=np.int64)
    z, logw = _hermite_rule(100)
    x = np.linspace(-1, 1, 256).repeat(100)
    t = np.tile(np.linspace(0, 0.99, 100), 256)

    def fwd(k):
        return k["tanh_dual_forward"](Z, 2, src)

    def bwd(k):
        _, s = k["tanh_dual_forward"](Z, 2, src)
        return k["tanh_dual_backward"](Z, s, G, 2, src)

    return {
        "csr_matmat 25600x25600 @ (25600,12)": lambda k: k["csr_matmat"](M.indptr, M.indices, M.data, X),
        "tanh_dual_forward (4,25600,20)": lambda k: fwd(k)[0],
        "tanh_dual forward+backward": bwd,
        "cole_hopf_sum 25600 nodes, order 100": lambda k: k["cole_hopf_sum"](x, t, z, logw, BURGERS_NU),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.numba_kernels is None:
        raise SystemExit("numba backend unavailable (unset GCNFFNN_DISABLE_NUMBA)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<40} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  max|diff|")
    for name, fn in cases(rng).items():
        ref = fn(kernels.numpy_kernels)
        out = fn(kernels.numba_kernels)  # compile
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(out))))
        times = {}
        for label, k in (("numpy", kernels.numpy_kernels), ("numba", kernels.numba_kernels)):
            times[label] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<40} {times['numpy']:>10.2f} {times['numba']:>10.2f} "
              f"{times['numpy'] / times['numba']:>7.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
