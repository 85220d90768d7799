"""Interpreted-fallback agreement: the same kernels run without numba when
COPGMM_NUMBA=0; outputs must match the compiled path."""
import json
import os
import subprocess
import sys

import numpy as np

from copgmm import _backend
from copgmm import _kernels as _k

_PROBE = r"""
import json
import numpy as np
from copgmm import _backend
from copgmm import _kernels as _k

assert not _backend.NUMBA_ENABLED
out = {
    "norm_ppf": _k.norm_ppf(0.975),
    "bvn": _k.bvn_cdf(0.3, -0.4, 0.6),
    "tvn": _k.tvn_cdf(0.3, -0.4, 0.2, 0.5, -0.2, 0.1),
    "gammainc": _k.gammainc_reg(2.5, 3.1),
    "tw_pdf": _k.tweedie_logpdf(1.3, 2.0, 1.5, 1.67),
    "tw_cdf": _k.tweedie_cdf_scalar(1.3, 2.0, 1.5, 1.67),
    "tw_q": _k.tweedie_quantile_scalar(0.9, 2.0, 1.5, 1.67),
}
print(json.dumps(out))
"""


def test_numba_enabled_by_default():
    assert _backend.NUMBA_ENABLED


def test_fallback_matches_compiled():
    env = dict(os.environ, COPGMM_NUMBA="0")
    proc = subprocess.run([sys.executable, "-c", _PROBE], env=env,
                          capture_output=True, text=True, check=True)
    got = json.loads(proc.stdout.strip().splitlines()[-1])
    expect = {
        "norm_ppf": _k.norm_ppf(0.975),
        "bvn": _k.bvn_cdf(0.3, -0.4, 0.6),
        "tvn": _k.tvn_cdf(0.3, -0.4, 0.2, 0.5, -0.2, 0.1),
        "gammainc": _k.gammainc_reg(2.5, 3.1),
        "tw_pdf": _k.tweedie_logpdf(1.3, 2.0, 1.5, 1.67),
        "tw_cdf": _k.tweedie_cdf_scalar(1.3, 2.0, 1.5, 1.67),
        "tw_q": _k.tweedie_quantile_scalar(0.9, 2.0, 1.5, 1.67),
    }
    for key, val in expect.items():
        assert abs(got[key] - val) <= 1e-12 * max(1.0, abs(val)), key


def test_indep_cells_kernel_fallback():
    env = dict(os.environ, COPGMM_NUMBA="0")
    probe = r"""
import json
import numpy as np
from copgmm import _backend
from copgmm import _kernels as _k
assert not _backend.NUMBA_ENABLED
logf = np.empty(2); score = np.empty((2, 3))
_k._indep_cells_eval(-0.2, 0.2, 0.1,
                     np.array([0.8, 0.6]), np.array([0.2, -0.3]),
                     np.array([0.5, 0.4]), np.array([True, False]),
                     np.array([False, True]), np.array([False, True]),
                     np.array([0.0, -1.2]), np.array([-0.5, 0.0]),
                     np.array([-0.2, -1.5]), logf, score)
print(json.dumps({"logf": logf.tolist(), "score": score.ravel().tolist()}))
"""
    proc = subprocess.run([sys.executable, "-c", probe], env=env,
                          capture_output=True, text=True, check=True)
    got = json.loads(proc.stdout.strip().splitlines()[-1])
    logf = np.empty(2)
    score = np.empty((2, 3))
    _k._indep_cells_eval(-0.2, 0.2, 0.1,
                         np.array([0.8, 0.6]), np.array([0.2, -0.3]),
                         np.array([0.5, 0.4]), np.array([True, False]),
                         np.array([False, True]), np.array([False, True]),
                         np.array([0.0, -1.2]), np.array([-0.5, 0.0]),
                         np.array([-0.2, -1.5]), logf, score)
    assert np.allclose(got["logf"], logf, atol=1e-12)
    assert np.allclose(got["score"], score.ravel(), atol=1e-12)
