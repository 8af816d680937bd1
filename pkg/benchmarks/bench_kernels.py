"""Time the numba and pure-numpy kernels side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--games 2000]

Both implementations are called directly, so the env flag does not matter here.
Reports best-of-N wall time and the max absolute difference between outputs.
"""
import argparse
import time

import numpy as np

from pandaskill._accel import HAS_NUMBA
from pandaskill.kernels import (
    _logistic_pgd_numba, _logistic_pgd_numpy, _pl_team_terms_numba, _pl_team_terms_numpy,
)


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def pl_cases(n, rng):
    cases = []
    for _ in range(n):
        k = 10
        mu = rng.normal(25, 5, k)
        s2 = rng.uniform(1, 70, k)
        rank = rng.permutation(k).astype(np.float64)
        cases.append((mu, s2, rank))
    return cases


def run_pl(kernel, cases, beta_sq):
    return [kernel(mu, s2, r, beta_sq) for mu, s2, r in cases]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--games", type=int, default=2000, help="PL updates per timing (10 singletons each)")
    ap.add_argument("--rows", type=int, default=8000, help="rows in the logistic fit")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    beta_sq = (25.0 / 6.0) ** 2
    cases = pl_cases(args.games, rng)
    run_pl(_pl_team_terms_numba, cases[:1], beta_sq)  # compile outside the timing

    t_np, out_np = best_of(lambda: run_pl(_pl_team_terms_numpy, cases, beta_sq), args.repeat)
    t_nb, out_nb = best_of(lambda: run_pl(_pl_team_terms_numba, cases, beta_sq), args.repeat)
    diff = max(float(np.max(np.abs(a[j] - b[j]))) for a, b in zip(out_np, out_nb) for j in (0, 1))
    print(f"pl_team_terms  x{args.games:<6} numpy {t_np * 1e3:8.2f} ms   numba {t_nb * 1e3:8.2f} ms   "
          f"speedup {t_np / t_nb:5.1f}x   max|diff| {diff:.2e}")

    n, d = args.rows, 15
    X = rng.standard_normal((n, d))
    w_true = rng.normal(0, 0.7, d)
    y = (rng.random(n) < 1 / (1 + np.exp(-X @ w_true))).astype(np.float64)
    sign = np.zeros(d, dtype=np.int64)
    lam = 1e-4
    step = 1.0 / (0.25 * np.linalg.eigvalsh(X.T @ X / n)[-1] + lam)
    w0 = np.zeros(d)
    fit = lambda k: lambda: k(X, y, sign, w0, 0.0, lam, step, 10000, 1e-8)  # noqa: E731
    fit(_logistic_pgd_numba)()
    t_np, r_np = best_of(fit(_logistic_pgd_numpy), args.repeat)
    t_nb, r_nb = best_of(fit(_logistic_pgd_numba), args.repeat)
    diff = float(np.max(np.abs(r_np[0] - r_nb[0])))
    print(f"logistic_pgd   {n}x{d:<4} numpy {t_np * 1e3:8.2f} ms   numba {t_nb * 1e3:8.2f} ms   "
          f"speedup {t_np / t_nb:5.1f}x   max|diff| {diff:.2e}   iters {r_nb[3]}")


if __name__ == "__main__":
    main()
