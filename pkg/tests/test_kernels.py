import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdte import _backend
from hdte.lasso import solve_weighted_l1

try:
    _backend.get_kernel("cython")
    HAVE_EXT = True
except ImportError:
    HAVE_EXT = False

needs_ext = pytest.mark.skipif(not HAVE_EXT, reason="compiled kernel not built")


def run_kernel(name, F, w, y, thresh):
    beta = np.zeros(F.shape[1])
    r = y.copy()
    sweeps, kkt = solve_weighted_l1(F, w, r, beta, thresh, kkt_tol=1e-10,
                                    kernel=_backend.get_kernel(name))
    return beta, r, sweeps, kkt


@needs_ext
@given(st.integers(3, 50), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_compiled_and_python_kernels_agree(n, p, seed):
    r = np.random.default_rng(seed)
    F = np.asfortranarray(r.standard_normal((n, p)))
    w = r.uniform(0.05, 1.0, n)
    y = F[:, 0] + r.standard_normal(n)
    thresh = r.uniform(0.0, 0.3, p)
    b1, r1, s1, _ = run_kernel("cython", F, w, y, thresh)
    b2, r2, s2, _ = run_kernel("python", F, w, y, thresh)
    assert s1 == s2
    np.testing.assert_allclose(b1, b2, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(r1, r2, rtol=1e-10, atol=1e-12)


def test_unknown_kernel_name():
    with pytest.raises(ValueError):
        _backend.get_kernel("fortran")


def test_env_var_selects_python_fallback():
    env = dict(os.environ, HDTE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import hdte; print(hdte.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_default_backend_is_compiled():
    if os.environ.get("HDTE_PURE_PYTHON"):
        pytest.skip("fallback forced by environment")
    assert _backend.BACKEND == "cython"
