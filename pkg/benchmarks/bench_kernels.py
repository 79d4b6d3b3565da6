"""Compare the numba and numpy backends of the hot kernels.

Run ``python benchmarks/bench_kernels.py``; prints the median wall time of each
kernel under both backends and checks that their outputs agree.
"""
import argparse
import time

import numpy as np

from dso_opl import _accel, _kernels


def _median_time(fn, repeats):
    fn()  # warm-up (triggers JIT compilation)
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return float(np.median(times))


def cases(rng, batch, n_actions, hidden, m):
    X = rng.normal(size=(batch, 10))
    E = rng.normal(size=(n_actions, 5))
    W1 = rng.normal(size=(hidden, 15)) * 0.3
    b1 = rng.normal(size=hidden) * 0.1
    W2 = rng.normal(size=(1, hidden)) * 0.3
    b2 = np.zeros(1)
    U = rng.normal(size=(batch, n_actions))
    U[rng.random(U.shape) < 0.5] = 0.0
    S = rng.normal(size=(batch, 5))
    T = rng.normal(size=(batch, m, 5))
    P = rng.dirichlet(np.ones(n_actions), size=batch)
    u = rng.random(batch)
    C = rng.normal(size=(10, 5))
    return {
        "pair_forward": lambda: _kernels.pair_forward(X, E, W1, b1, W2, b2),
        "pair_backward": lambda: _kernels.pair_backward(X, E, W1, b1, W2, U),
        "paired_kernel": lambda: _kernels.paired_kernel(S, T, 1.0, False),
        "assign_nearest": lambda: _kernels.assign_nearest(E, C),
        "sample_rows": lambda: _kernels.sample_rows(P, u),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--actions", type=int, default=1000)
    ap.add_argument("--hidden", type=int, default=100)
    ap.add_argument("--augment", type=int, default=8)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
        return
    table = cases(np.random.default_rng(0), args.batch, args.actions, args.hidden, args.augment)
    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  agree")
    previous = _accel.get_backend()
    try:
        for name, fn in table.items():
            _accel.set_backend("numpy")
            ref = fn()
            t_np = _median_time(fn, args.repeats)
            _accel.set_backend("numba")
            out = fn()
            t_nb = _median_time(fn, args.repeats)
            a = ref if isinstance(ref, tuple) else (ref,)
            b = out if isinstance(out, tuple) else (out,)
            agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in zip(a, b))
            print(f"{name:<16}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}  {agree}")
    finally:
        _accel.set_backend(previous)


if __name__ == "__main__":
    main()
