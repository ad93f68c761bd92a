"""Time the compiled and numpy im2col/col2im kernels on model-sized shapes.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per (shape, kernel, backend) with the best-of-N time and the
speedup of the compiled kernel over the fallback.
"""
import argparse
import timeit

import numpy as np

from nesr.core.kernels import backends

# (label, input shape, kernel size): encoder convs on a 32x32 crop, SPI conv3d at 31 bands
CASES = [
    ("encoder 3x3", (32, 32, 32), 3),
    ("encoder 3x3 64px", (32, 64, 64), 3),
    ("spi 3x3x3 first", (2, 31, 32, 32), 3),
    ("spi 3x3x3 second", (16, 31, 32, 32), 3),
]


def bench(repeat: int) -> None:
    impls = backends()
    if "cython" not in impls:
        print("compiled kernels not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    for label, shape, k in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        cols = impls["python"].im2col(x, k)
        times = {}
        for name, mod in impls.items():
            fwd = min(timeit.repeat(lambda: mod.im2col(x, k), number=1, repeat=repeat))
            bwd = min(timeit.repeat(lambda: mod.col2im(cols, shape[0], shape[1:], k),
                                    number=1, repeat=repeat))
            times[name] = (fwd, bwd)
        for i, op in enumerate(("im2col", "col2im")):
            py = times["python"][i]
            line = f"{label:<18} {op:<7} python {py * 1e3:8.2f} ms"
            if "cython" in times:
                cy = times["cython"][i]
                line += f"   cython {cy * 1e3:8.2f} ms   speedup {py / cy:5.2f}x"
            print(line)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    bench(p.parse_args().repeat)


if __name__ == "__main__":
    main()
