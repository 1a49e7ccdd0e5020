"""Time the compiled MLP kernels against the pure-numpy reference.

Usage::

    python benchmarks/bench_kernels.py [--repeat 200]

Reports microseconds per call for forward, forward+backward and the latent
Jacobian on a generator-sized network, at batch sizes 1 and 32.
"""
import argparse
import timeit

import numpy as np

from geocgan import _kernels_py as python_backend
from geocgan.models import init_params, layer_sizes
from geocgan.numerics import make_rng

try:
    from geocgan import _kernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None


def bench(mod, sizes, params, X, repeat):
    act = 0
    acts = mod.mlp_forward(params, sizes, X, act)
    gY = np.ones((X.shape[0], sizes[-1]))
    cases = {
        "forward": lambda: mod.mlp_forward(params, sizes, X, act),
        "forward+backward": lambda: mod.mlp_backward(params, sizes, mod.mlp_forward(params, sizes, X, act), gY, act),
        "jacobian": lambda: mod.mlp_jacobian(params, sizes, X, act, 4),
    }
    del acts
    return {name: min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat * 1e6 for name, fn in cases.items()}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    sizes = layer_sizes(6, (64, 64, 64), 3)
    params = init_params(list(sizes), make_rng(0))
    backends = [("python", python_backend)] + ([("compiled", compiled_backend)] if compiled_backend else [])
    print(f"{'batch':>5} {'kernel':>17} " + " ".join(f"{n:>12}" for n, _ in backends) + "   speedup")
    for batch in (1, 32):
        X = make_rng(1).normal(size=(batch, sizes[0]))
        res = {n: bench(m, sizes, params, X, args.repeat) for n, m in backends}
        for kernel in res["python"]:
            cols = " ".join(f"{res[n][kernel]:>10.1f}us" for n, _ in backends)
            speed = f"{res['python'][kernel] / res['compiled'][kernel]:8.2f}x" if compiled_backend else ""
            print(f"{batch:>5} {kernel:>17} {cols} {speed}")


if __name__ == "__main__":
    main()
