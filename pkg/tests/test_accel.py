import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mwclass import _accel, kernels
from mwclass._accel import python_impl

SCRIPT = """
import json, numpy as np
from mwclass import _accel
from mwclass.multiway import FitOptions, fit
from mwclass.simulation import Scenario, generate
data = generate(Scenario(p=6, m=4, n_train=20, structure=1, seed=3).with_signal_scale(1.5)).train
out = {"numba": _accel.USING_NUMBA}
for name, opts in (("dwd", FitOptions(rank=2)), ("svm", FitOptions(solver="svm"))):
    model = fit(data, opts)
    out[name] = {"B": model.B.tolist(), "beta": model.beta}
print(json.dumps(out))
"""


def run(disable):
    env = dict(os.environ, MWCLASS_WORKERS="1", MWCLASS_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", SCRIPT], capture_output=True, text=True, env=env,
                         timeout=600)
    assert res.returncode == 0, res.stderr
    return json.loads(res.stdout)


def test_fallback_matches_compiled():
    fast, slow = run(False), run(True)
    assert fast["numba"] is _accel.USING_NUMBA and slow["numba"] is False
    for name in ("dwd", "svm"):
        np.testing.assert_allclose(slow[name]["B"], fast[name]["B"], atol=1e-8)
        assert slow[name]["beta"] == pytest.approx(fast[name]["beta"], abs=1e-8)


def problem(seed, n=14, d=5):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    X = rng.normal(size=(n, d)) + 0.8 * y[:, None]
    return X, y


@pytest.mark.parametrize("seed", range(3))
def test_dwd_kernel_equivalence(seed):
    X, y = problem(seed)
    a = kernels.dwd_barrier_newton(X, y, 4.0, 1e-8, 200)
    b = python_impl(kernels.dwd_barrier_newton)(X, y, 4.0, 1e-8, 200)
    np.testing.assert_allclose(a[0], b[0], atol=1e-8)
    assert a[1] == pytest.approx(b[1], abs=1e-8)
    assert a[2] == pytest.approx(b[2], rel=1e-10)
    assert a[5] == b[5]


@pytest.mark.parametrize("seed", range(3))
def test_smo_kernel_equivalence(seed):
    X, y = problem(seed)
    K = X @ X.T
    a = kernels.svm_smo(K, y, 0.5, 1e-10, 100_000)
    b = python_impl(kernels.svm_smo)(K, y, 0.5, 1e-10, 100_000)
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
    assert a[1] == pytest.approx(b[1], abs=1e-10)


def test_distance_kernel_equivalence():
    X, _ = problem(4, n=9, d=7)
    a = kernels.cross_class_distances(X[:4], X[4:])
    b = python_impl(kernels.cross_class_distances)(X[:4], X[4:])
    np.testing.assert_allclose(a, b, rtol=1e-14)
    ref = np.linalg.norm(X[:4, None, :] - X[None, 4:, :], axis=2).ravel()
    np.testing.assert_allclose(a, ref, rtol=1e-12)


def test_loss_kernel_equivalence():
    u = np.linspace(-2, 3, 41)
    np.testing.assert_allclose(kernels.dwd_loss(u, 9.0), python_impl(kernels.dwd_loss)(u, 9.0))
