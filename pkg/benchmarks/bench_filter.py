"""Benchmark the compiled filter kernel against the pure-Python fallback.

Run:  python3 benchmarks/bench_filter.py
"""

import time

import numpy as np

from coxaffine import FellerModel, RngStream, StateSpaceSpec
from coxaffine import estimate
from coxaffine import _filter_py

try:
    from coxaffine import _filter_core
except ImportError:
    _filter_core = None


def time_kernel(kernel, y, n_calls):
    params = FellerModel(kappa=0.2, theta=0.04, sigma=0.05, lambda0=0.04)
    spec = StateSpaceSpec()
    a, b, q0, q1 = estimate._transition_coeffs(params, spec.delta)
    d, c = estimate._measurement_coeffs(params, spec)
    out = tuple(np.empty(y.size) for _ in range(6))
    args = (y, a, b, q0, q1, d, c, 1e-6, params.theta, params.stationary_var(), *out)
    kernel(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(n_calls):
        ll, err = kernel(*args)
    dt = (time.perf_counter() - t0) / n_calls
    assert err < 0
    return dt, ll


def main():
    model = FellerModel(kappa=0.2, theta=0.04, sigma=0.05, lambda0=0.04)
    spec = StateSpaceSpec()
    print(f"{'T':>6} {'python':>12} {'cython':>12} {'speedup':>8}")
    for T, n_calls in ((500, 200), (5000, 40)):
        y = estimate.simulate_observations(model, 1e-3, spec, T, RngStream(7))
        t_py, ll_py = time_kernel(_filter_py.filter_kernel, y, n_calls)
        if _filter_core is None:
            print(f"{T:>6} {t_py * 1e3:>10.3f}ms {'n/a':>12} {'n/a':>8}")
            continue
        t_cy, ll_cy = time_kernel(_filter_core.filter_kernel, y, n_calls)
        assert ll_py == ll_cy, "kernels disagree bitwise"
        print(f"{T:>6} {t_py * 1e3:>10.3f}ms {t_cy * 1e3:>10.3f}ms {t_py / t_cy:>7.1f}x")
    if _filter_core is None:
        print("compiled kernel unavailable; pure-Python fallback only")


if __name__ == "__main__":
    main()
