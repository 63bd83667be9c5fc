"""Compare the numba and numpy kernel backends.

Times one smoothing pass (E-step) on a single slice and a full L-MLDS fit,
checks that both backends agree, and prints a small table.

    python3 benchmarks/bench_backends.py [--repeats 5] [--json out.json]
"""

import argparse
import json
import time

import numpy as np

from lmlds import kernels
from lmlds.data_io import generate_synthetic
from lmlds.gaussian_lds import smooth
from lmlds.model import init_slice, train


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def estep_case(n_obs, n_latent, n_steps, seed=0):
    rng = np.random.default_rng(seed)
    params = init_slice(n_obs, n_latent, rng)
    obs = rng.standard_normal((n_steps, n_obs)) + 1j * rng.standard_normal((n_steps, n_obs))
    return params, obs


def run(repeats):
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rows = []

    for n_obs, n_latent, n_steps in [(3, 2, 200), (10, 4, 200), (20, 8, 500)]:
        params, obs = estep_case(n_obs, n_latent, n_steps)
        smooth(params, obs, backend="numba")  # compile
        a = smooth(params, obs, backend="numba")
        b = smooth(params, obs, backend="numpy")
        diff = float(np.max(np.abs(a.smoothed_means - b.smoothed_means)))
        t_numba = best_of(lambda: smooth(params, obs, backend="numba"), repeats)
        t_numpy = best_of(lambda: smooth(params, obs, backend="numpy"), repeats)
        rows.append(("e-step", f"I={n_obs} J={n_latent} N={n_steps}", t_numba, t_numpy, diff))

    for rows_i, tubes in [(5, 6), (10, 10)]:
        series, _ = generate_synthetic((rows_i, 4, tubes), "dft", seed=1, n_steps=200)
        y = series.observations
        results = {}
        for backend in ("numba", "numpy"):
            kernels.set_backend(backend)
            train(y[:20], 4, "dft", max_iters=2)
            results[backend] = best_of(lambda: train(y, 4, "dft", max_iters=10, tol=None), repeats)
            model, _ = train(y, 4, "dft", max_iters=10, tol=None)
            results[backend + "_model"] = model
        kernels.set_backend("numba")
        diff = max(
            float(np.max(np.abs(p.c - q.c)))
            for p, q in zip(results["numba_model"].slices, results["numpy_model"].slices)
        )
        rows.append(("train", f"I={rows_i} J=4 K={tubes} N=200", results["numba"], results["numpy"], diff))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--json", help="also write results here")
    args = parser.parse_args()

    rows = run(args.repeats)
    print(f"{'case':<8} {'size':<24} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max diff':>10}")
    for case, size, t_numba, t_numpy, diff in rows:
        print(f"{case:<8} {size:<24} {t_numba:>10.4f} {t_numpy:>10.4f} {t_numpy / t_numba:>7.1f}x {diff:>10.2e}")
    if args.json:
        keys = ("case", "size", "numba_seconds", "numpy_seconds", "max_abs_diff")
        with open(args.json, "w") as fh:
            json.dump([dict(zip(keys, r)) for r in rows], fh, indent=2)


if __name__ == "__main__":
    main()
