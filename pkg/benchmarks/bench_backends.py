#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times per-class fitting (K independent 1-D EM problems), GMM batch scoring
(the prediction hot loop), and KDE batch scoring, and cross-checks the two
implementations' outputs.  Sizes default to a production-scale
configuration (K=2048 features, S=2 components); trim with --quick for a
fast look.

    python3 benchmarks/bench_backends.py [--quick]
"""

import argparse
import time

import numpy as np

from bayesmem import _core_py

try:
    from bayesmem import _core_c
except ImportError:
    _core_c = None


def timeit(fn, repeats=3):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(quick: bool):
    k = 256 if quick else 2048
    n_train = 200 if quick else 500
    n_test = 200 if quick else 1000
    n_centers = 60
    s = 2
    rng = np.random.default_rng(0)

    xt = np.ascontiguousarray(
        rng.standard_normal((k, n_train)) * 0.1 + rng.uniform(-0.5, 0.5, (k, 1))
    )
    x_test = np.ascontiguousarray(rng.uniform(-0.7, 0.7, (n_test, k)))
    centers = np.ascontiguousarray(rng.uniform(-0.5, 0.5, (n_centers, k)))
    bw = rng.uniform(0.05, 0.2, k)

    impls = [("python", _core_py)]
    if _core_c is not None:
        impls.append(("c", _core_c))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    results = {}
    for name, impl in impls:
        t_fit, fit = timeit(lambda: impl.gmm_fit_batch(xt, s, 200, 1e-6, 1e-4))
        params = (fit["weights"], fit["mus"], fit["sigmas"])
        t_gmm, gmm_scores = timeit(lambda: impl.gmm_score_batch(x_test, *params, -745.0))
        t_kde, kde_scores = timeit(lambda: impl.kde_score_batch(x_test, centers, bw, -745.0))
        t_stats, stats = timeit(lambda: impl.gmm_resp_stats(x_test, *params))
        results[name] = {
            "fit": (t_fit, fit),
            "gmm_score": (t_gmm, gmm_scores[0]),
            "kde_score": (t_kde, kde_scores[0]),
            "resp_stats": (t_stats, stats),
        }

    header = f"{'kernel':<12}" + "".join(f"{name + ' (s)':>14}" for name, _ in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(f"\nsizes: K={k}, N_train={n_train}, N_test={n_test}, S={s}, centers={n_centers}")
    print(header)
    print("-" * len(header))
    for kernel in ("fit", "gmm_score", "kde_score", "resp_stats"):
        row = f"{kernel:<12}"
        times = [results[name][kernel][0] for name, _ in impls]
        row += "".join(f"{t:>14.4f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)

    if len(impls) == 2:
        fit_py = results["python"]["fit"][1]
        fit_c = results["c"]["fit"][1]
        dev_fit = max(
            float(np.max(np.abs(fit_py[key] - fit_c[key])))
            for key in ("weights", "mus", "sigmas")
        )
        dev_gmm = float(
            np.max(np.abs(results["python"]["gmm_score"][1] - results["c"]["gmm_score"][1]))
        )
        dev_kde = float(
            np.max(np.abs(results["python"]["kde_score"][1] - results["c"]["kde_score"][1]))
        )
        print(f"\nmax |python - c| deviation: fit params {dev_fit:.2e}, "
              f"gmm scores {dev_gmm:.2e}, kde scores {dev_kde:.2e}")
        assert dev_fit < 1e-8 and dev_gmm < 1e-7 and dev_kde < 1e-7, "backends disagree"
        print("backends agree within tolerance")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller sizes for a fast look")
    bench(parser.parse_args().quick)
