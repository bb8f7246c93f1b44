"""Compare the numba and numpy column kernels on random inputs.

Usage: python3 benchmarks/bench_kernels.py [--entries N] [--repeat R]
"""
import argparse
import time

import numpy as np

from zsposg import _kernels as K


def make_inputs(rng, entries, rows, A=3, Z=3):
    seg = np.sort(rng.integers(0, rows, entries))
    return (seg, rows, rng.random(entries), rng.random(entries), rng.random((entries, A)),
            rng.random((entries, A, A, Z, Z)), rng.normal(size=(entries, A, A)),
            rng.normal(size=(rows, A, Z)), 1.0, 0.5, False)


def bench(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile for numba)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--entries", type=int, nargs="+", default=[16, 256, 4096])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print("entries,numpy_us,numba_us,speedup")
    for n in args.entries:
        inputs = make_inputs(rng, n, max(1, n // 4))
        t_np = bench(K.column_payoffs_numpy, inputs, args.repeat)
        if K.column_payoffs_numba is None:
            print(f"{n},{t_np * 1e6:.1f},,")
            continue
        t_nb = bench(K.column_payoffs_numba, inputs, args.repeat)
        print(f"{n},{t_np * 1e6:.1f},{t_nb * 1e6:.1f},{t_np / t_nb:.2f}")


if __name__ == "__main__":
    main()
