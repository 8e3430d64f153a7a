"""Compiled vs pure-numpy beam kernels.

Times the nonlinear force and tangent of the beam model for a batch of
states (the harmonic-balance time samples), with both backends, and checks
that they agree.  Run with ``python benchmarks/bench_core.py``.
"""

import argparse
import timeit

import numpy as np

from dnform import _kernel_py
from dnform.model import BeamConfig, assemble_vk_beam

try:
    from dnform import _vkcore
except ImportError:  # extension not built
    _vkcore = None


def bench(fn, args, repeat):
    t = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return min(t)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--elements", type=int, nargs="+", default=[20, 80])
    p.add_argument("--samples", type=int, default=64, help="states per batch")
    p.add_argument("--repeat", type=int, default=7)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<8} {'elements':>8} {'samples':>7} {'numpy (ms)':>11} "
          f"{'cython (ms)':>11} {'speed-up':>8} {'max rel diff':>12}")
    for ne in args.elements:
        fe = assemble_vk_beam(BeamConfig(n_elements=ne)).force_evaluator
        q = np.zeros((args.samples, fe.n_full))
        q[:, fe.free] = 1e-3 * rng.standard_normal((args.samples, fe.n))
        kargs = (q, fe.edofs, fe.slopes, fe.weights, fe.lengths, fe.ea)
        for name in ("vk_force_nl", "vk_tangent_nl"):
            ref = getattr(_kernel_py, name)
            t_py = bench(ref, kargs, args.repeat)
            if _vkcore is None:
                print(f"{name[3:-3]:<8} {ne:>8} {args.samples:>7} {1e3 * t_py:>11.3f} "
                      f"{'n/a':>11} {'n/a':>8} {'n/a':>12}")
                continue
            fast = getattr(_vkcore, name)
            t_cy = bench(fast, kargs, args.repeat)
            a, b = ref(*kargs), fast(*kargs)
            diff = np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300)
            print(f"{name[3:-3]:<8} {ne:>8} {args.samples:>7} {1e3 * t_py:>11.3f} "
                  f"{1e3 * t_cy:>11.3f} {t_py / t_cy:>8.1f} {diff:>12.2e}")


if __name__ == "__main__":
    main()
