"""Compare the compiled and numpy kernels on the residual / fit-gradient hot path.

Usage: python benchmarks/bench_kernels.py [--n 41] [--repeat 1000]
"""
import argparse
import timeit

import numpy as np

from eitcvx import _kernels_py
from eitcvx.functional import free_mask

try:
    from eitcvx import _kernels_c
except ImportError:
    _kernels_c = None


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=41, help="grid points per side")
    ap.add_argument("--repeat", type=int, default=1000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    n = args.n
    r, s = rng.normal(size=(n, n)), rng.normal(size=(n, n))
    psi = np.where(free_mask(n, n), 1.0, 0.0)
    h, eps = 1.0 / (n - 1), 0.0002
    backends = {"python": _kernels_py}
    if _kernels_c is not None:
        backends["cython"] = _kernels_c
    else:
        print("compiled kernels not built; timing numpy only")
    times = {}
    for name, mod in backends.items():
        for kern, call in (("residuals", lambda: mod.residuals(r, s, h, eps)),
                           ("fit_gradient", lambda: mod.fit_gradient(r, s, psi, h, eps))):
            t = min(timeit.repeat(call, number=args.repeat, repeat=3))
            times[name, kern] = t
            print(f"{name:7s} {kern:13s} {n}x{n}: {1e6 * t / args.repeat:9.2f} us/call")
    if "cython" in backends:
        for kern in ("residuals", "fit_gradient"):
            print(f"speed-up {kern}: {times['python', kern] / times['cython', kern]:.1f}x")


if __name__ == "__main__":
    main()
