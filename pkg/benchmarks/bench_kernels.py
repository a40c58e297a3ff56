"""Numba vs numpy timings for the 3D IoU matrix and assignment kernels.

Run with ``python3 benchmarks/bench_kernels.py [sizes] [repeats]``. Setting
``GNNTRACK_NUMBA=0`` limits the run to the numpy path.
"""

import sys

from gnntrack import bench


def main(argv):
    sizes = tuple(int(s) for s in argv[0].split(",")) if argv else (8, 16, 32, 64, 128)
    repeats = int(argv[1]) if len(argv) > 1 else 5
    rows = bench.run(sizes, repeats)
    print(bench.format_rows(rows), end="")
    for key, ratio in bench.speedups(rows).items():
        print(f"speedup {key}: {ratio:.1f}x")


if __name__ == "__main__":
    main(sys.argv[1:])
