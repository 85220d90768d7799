"""Benchmark the hot kernels under the compiled and interpreted backends.

Runs each kernel batch in a subprocess with COPGMM_NUMBA=1 (numba) and
COPGMM_NUMBA=0 (interpreted fallback) and prints a comparison table.

    python benchmarks/bench_kernels.py [--points 20000]
"""
import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import json
import time

import numpy as np

from copgmm import _backend
from copgmm import _kernels as _k

N = {npts}
rng = np.random.default_rng(0)
res = {{"backend": "numba" if _backend.NUMBA_ENABLED else "python"}}


def bench(name, fn, number=1, warmup=True):
    if warmup:
        fn()
    t0 = time.perf_counter()
    for _ in range(number):
        fn()
    res[name] = (time.perf_counter() - t0) / number


z = rng.standard_normal(N)
out = np.empty(N)
bench("norm_cdf_batch", lambda: _k._norm_cdf_batch(z, out))

u = rng.uniform(1e-6, 1 - 1e-6, N)
bench("norm_ppf_batch", lambda: _k._norm_ppf_batch(u, out))

h = rng.standard_normal(N)
k2 = rng.standard_normal(N)
r = rng.uniform(-0.95, 0.95, N)
bench("bvn_cdf_batch", lambda: _k._bvn_cdf_batch(h, k2, r, out))

ntv = max(N // 40, 50)
zz = rng.standard_normal((ntv, 3))


def tvn_loop():
    acc = 0.0
    for i in range(ntv):
        acc += _k.tvn_cdf(zz[i, 0], zz[i, 1], zz[i, 2], 0.4, -0.2, 0.3)
    return acc


bench("tvn_cdf_x%d" % ntv, tvn_loop)

y = rng.gamma(2.0, 1.5, N)
mu = rng.uniform(0.5, 5.0, N)
bench("tweedie_cdf_batch", lambda: _k._tweedie_cdf_batch(y, mu, 1.0, 1.67,
                                                         out))
bench("tweedie_logpdf_batch",
      lambda: _k._tweedie_logpdf_batch(y, mu, 1.0, 1.67, out))

nc = max(N // 10, 100)
za = rng.uniform(-1, 1, nc)
z1 = rng.uniform(-1, 1, nc)
z2 = rng.uniform(-1, 1, nc)
d1 = rng.random(nc) < 0.2
d2 = rng.random(nc) < 0.2
steq = rng.random(nc) < 0.3
lf1 = np.where(d1, 0.0, -1.0)
lf2 = np.where(d2, 0.0, -1.0)
logden = np.full(nc, -0.3)
logf = np.empty(nc)
score = np.empty((nc, 3))
bench("dropout_cells_x%d" % nc,
      lambda: _k._indep_cells_eval(-0.2, 0.2, 0.1, za, z1, z2, d1, d2,
                                   steq, lf1, lf2, logden, logf, score))

print(json.dumps(res))
"""


def run(npts, numba_on):
    env = dict(os.environ, COPGMM_NUMBA="1" if numba_on else "0")
    proc = subprocess.run(
        [sys.executable, "-c", _WORKER.format(npts=npts)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=20000)
    args = ap.parse_args()
    fast = run(args.points, True)
    slow = run(args.points, False)
    assert fast.pop("backend") == "numba"
    slow.pop("backend")
    print(f"{'kernel':<26}{'numba':>12}{'python':>12}{'speedup':>10}")
    for key in fast:
        a, b = fast[key], slow[key]
        print(f"{key:<26}{a * 1e3:>10.2f}ms{b * 1e3:>10.2f}ms"
              f"{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
