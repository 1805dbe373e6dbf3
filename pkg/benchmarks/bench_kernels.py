"""Time the compiled quantization kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 4096,262144,4194304] [--block 64]

Both backends are imported directly, so the result does not depend on
LACOS_FORCE_PYTHON. Outputs are checked for bitwise agreement before timing.
"""
import argparse
import timeit

import numpy as np

from lacos import _kernels_py

try:
    from lacos import _kernels
except ImportError:
    _kernels = None

OPS = ("quantize_signed", "quantize_unsigned", "dequantize_signed", "dequantize_unsigned")


def best_of(fn, repeat=5):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench(n, block, rng):
    x = rng.standard_normal(n).astype(np.float32)
    inputs = {
        "quantize_signed": (x,),
        "quantize_unsigned": (np.abs(x),),
    }
    inputs["dequantize_signed"] = _kernels_py.quantize_signed(x, block)
    inputs["dequantize_unsigned"] = _kernels_py.quantize_unsigned(np.abs(x), block)
    rows = []
    for op in OPS:
        args = inputs[op] + (block,)
        py = getattr(_kernels_py, op)
        t_py = best_of(lambda: py(*args))
        if _kernels is None:
            rows.append((op, n, t_py, None))
            continue
        cy = getattr(_kernels, op)
        a, b = py(*args), cy(*args)
        same = all(np.array_equal(u, v) for u, v in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{op}: backends disagree at n={n}")
        rows.append((op, n, t_py, best_of(lambda: cy(*args))))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="4096,262144,4194304")
    ap.add_argument("--block", type=int, default=64)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'op':22s} {'elements':>10s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for n in (int(s) for s in args.sizes.split(",")):
        for op, size, t_py, t_cy in bench(n, args.block, rng):
            cy = "-" if t_cy is None else f"{1e3 * t_cy:10.3f}"
            sp = "-" if t_cy is None else f"{t_py / t_cy:7.2f}x"
            print(f"{op:22s} {size:10d} {1e3 * t_py:10.3f} {cy:>10s} {sp:>8s}")


if __name__ == "__main__":
    main()
