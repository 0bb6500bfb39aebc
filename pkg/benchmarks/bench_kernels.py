"""Time the compiled basis kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--batch 2000] [--repeat 20]

Shapes match a training iteration: a batch of 4-dimensional states
evaluated on the 150-term circumnavigation basis.
"""

import argparse
import timeit

import numpy as np

from irlpi import _pykernels
from irlpi.valuefn import make_paper_basis

try:
    from irlpi import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    lo = np.array([-3.0, -1.0, -np.pi, 0.0])
    hi = np.array([65.0, 1.0, np.pi, np.pi / 2])
    X = lo + (hi - lo) * rng.random((args.batch, 4))
    E = make_paper_basis().terms
    w = rng.normal(size=E.shape[0])

    cases = {
        "basis_values": lambda m: m.basis_values(X, E),
        "basis_jacobian": lambda m: m.basis_jacobian(X, E),
        "value_and_gradient": lambda m: m.value_and_gradient(X, E, w),
    }
    backends = {"numpy": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not available; timing the numpy fallback only")

    print(f"batch={args.batch} terms={E.shape[0]} best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{b + ' [ms]':>14}" for b in backends) + f"{'speedup':>10}")
    for name, call in cases.items():
        times = {b: _best(lambda m=m: call(m), args.repeat) * 1e3 for b, m in backends.items()}
        speed = f"{times['numpy'] / times['cython']:>9.1f}x" if "cython" in times else f"{'-':>10}"
        print(f"{name:<20}" + "".join(f"{t:>14.3f}" for t in times.values()) + speed)
        if "cython" in backends:
            ref, got = (r if isinstance(r, tuple) else (r,) for r in (call(_pykernels), call(_ckernels)))
            for a, b in zip(ref, got):
                np.testing.assert_allclose(b, a, rtol=1e-10, atol=1e-10 * np.max(np.abs(a)))


if __name__ == "__main__":
    main()
