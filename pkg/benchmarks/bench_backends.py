"""Time the compiled kernels against the pure-numpy fallback.

Runs the same seeded filter pass through both backends at increasing
particle counts and reports wall time plus the log-likelihood gap (the
paths are bit-identical by construction; the likelihoods agree to ulps).

Usage: python benchmarks/bench_backends.py [--payments K] [--repeats R]
"""

import argparse
import time

from meterflow import _kernels
from meterflow.abc_filter import AbcConfig, run_filter
from meterflow.data_io import Scenario, simulate_scenario
from meterflow.state_model import ModelParams


def bench(obs, theta, num_particles, backend, repeats):
    cfg = AbcConfig(num_particles=num_particles, num_pseudo_obs=64)
    best, loglik = float("inf"), None
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = run_filter(obs, theta, cfg, seed=11, backend=backend)
        best = min(best, time.perf_counter() - t0)
        loglik = res.log_likelihood
    return best, loglik


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--payments", type=int, default=40)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    theta = ModelParams(0.752, 5.0, 0.8, 7)
    sc = Scenario(theta=theta, num_payments=args.payments, seed=99)
    obs = simulate_scenario(sc).observations
    backends = ["python"] + (["compiled"] if _kernels.HAVE_COMPILED else [])
    if not _kernels.HAVE_COMPILED:
        print("compiled extension unavailable; timing the fallback only")

    print(f"{args.payments} payments, 64 pseudo-obs, best of {args.repeats}")
    header = f"{'particles':>10}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}{'ll gap':>12}"
    print(header)
    for n in (1000, 4000, 16000, 64000):
        times, lls = {}, {}
        for b in backends:
            times[b], lls[b] = bench(obs, theta, n, b, args.repeats)
        row = f"{n:>10}" + "".join(f"{times[b]:>11.3f}s" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['compiled']:>9.2f}x"
            row += f"{abs(lls['python'] - lls['compiled']):>12.2e}"
        print(row)


if __name__ == "__main__":
    main()
