import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import damaged_states
from dtfa import _kernels_py, kernels

try:
    from dtfa import _kernels
except ImportError:  # pragma: no cover - compiled extension missing
    _kernels = None

needs_cython = pytest.mark.skipif(_kernels is None,
                                  reason="compiled kernels not built")


def _batch(db, seed, count=40):
    states = damaged_states(db, count, seed)
    eps = np.array([s.eps for s, _ in states])
    w = np.array([s.omega for s, _ in states])
    k = np.array([s.kappa for s, _ in states])
    d = np.array([d for _, d in states]) * 3.0
    return eps, w, k, d


@pytest.fixture(scope="module")
def batch(rom8):
    return _batch(rom8, 5)


def _args(db):
    return db.E, db.S, db.kappa_d, db.kappa_f, db.damageable


@needs_cython
def test_compiled_matches_reference(rom8, batch):
    a = _kernels_py.newton_batch(*_args(rom8), *batch)
    b = _kernels.newton_batch(*_args(rom8), *batch)
    np.testing.assert_array_equal(a[4], b[4])
    np.testing.assert_array_equal(a[3], b[3])
    for x, y in zip(a[:3] + a[5:6], b[:3] + b[5:6]):
        np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-13)


@needs_cython
def test_compiled_initial_guess(rom8, batch):
    ref = kernels.solve_batch(*_args(rom8), *batch)
    lam = ref[0] - batch[0]
    for mod in (_kernels_py, _kernels):
        out = mod.newton_batch(*_args(rom8), *batch, 1e-10, 50, lam)
        assert out[4].all()
        assert out[3].max() <= 2
        np.testing.assert_allclose(out[0], ref[0], atol=1e-12)


def test_solve_batch_converges_and_solves(rom8, batch):
    eps, w, k, its, ok, X, r = kernels.solve_batch(*_args(rom8), *batch)
    assert ok.all()
    lam = eps - batch[0]
    psi, _, _ = _kernels_py.residual_and_jacobian(lam, *_args(rom8), *batch)
    assert np.abs(psi).max() <= 1e-9
    assert np.all(w >= batch[1])
    assert np.all(k >= batch[2])


def test_staggered_start_polishes_to_newton_root(rom8, batch):
    # the ratcheted sweeps may overshoot unloading partitions, so the sweep
    # result is only a starting point for the Newton polish
    lam, ok = _kernels_py.staggered_batch(*_args(rom8), *batch)
    assert ok.all()
    ref = kernels.solve_batch(*_args(rom8), *batch)
    out = _kernels_py.newton_batch(*_args(rom8), *batch, 1e-10, 50, lam)
    assert out[4].all()
    np.testing.assert_allclose(out[0], ref[0], atol=1e-10)


def test_backend_switch():
    code = "from dtfa import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, DTFA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    if _kernels is not None:
        env.pop("DTFA_PURE_PYTHON")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "cython"

