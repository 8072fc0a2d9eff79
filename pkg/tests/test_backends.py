"""The numba kernels and the numpy fallback must agree."""

import os
import subprocess
import sys

import numpy as np
import pytest

from condcov import EstimatorConfig, EvaluationGrid, KernelSpec, backend_name, build_block_plan, numba_available
from condcov._accel import get_backend
from condcov.bootstrap import bootstrap_ensemble

from conftest import make_series

pytestmark = pytest.mark.skipif(not numba_available(), reason="numba not installed")


@pytest.fixture(scope="module")
def pair():
    return get_backend("numba"), get_backend("numpy")


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    n, p = 300, 3
    z = rng.uniform(-5, 25, n)
    return z, rng.standard_normal((n, p)), rng.integers(0, 3, n).astype(float), np.linspace(-5, 25, 17)


@pytest.mark.parametrize("family", [0, 1])
def test_kernel_matrix(pair, data, family):
    z, _, _, pts = data
    a, b = (k.kernel_matrix(pts, z, 2.0, family) for k in pair)
    assert np.allclose(a, b, rtol=1e-14, atol=1e-300)


@pytest.mark.parametrize("cached", [False, True])
def test_local_and_outer_sums(pair, data, cached):
    z, X, w, pts = data
    nb, np_ = pair
    K = np_.kernel_matrix(pts, z, 2.0, 0) if cached else None
    assert np.allclose(nb.local_sums(pts, z, w, X, 2.0, 0, K), np_.local_sums(pts, z, w, X, 2.0, 0, K), rtol=1e-11, atol=1e-12)
    (wa, Sa), (wb, Sb) = nb.outer_sums(pts, z, w, X, 2.0, 0, K), np_.outer_sums(pts, z, w, X, 2.0, 0, K)
    assert np.allclose(wa, wb, rtol=1e-12) and np.allclose(Sa, Sb, rtol=1e-11, atol=1e-12)


def test_prefix_and_ranges(pair, data):
    z, X, _, pts = data
    nb, np_ = pair
    K = np_.kernel_matrix(pts, z, 2.0, 0)
    Ca, Cb = nb.prefix_local_moments(K, z, pts, X), np_.prefix_local_moments(K, z, pts, X)
    assert np.allclose(Ca, Cb, rtol=1e-11, atol=1e-10)
    starts, stops = np.array([0, 50, 10, 280]), np.array([30, 90, 11, 300])
    assert np.allclose(nb.range_sums(Ca, starts, stops), np_.range_sums(Ca, starts, stops), rtol=1e-12, atol=1e-12)
    assert np.array_equal(nb.block_counts(starts, stops, 300), np_.block_counts(starts, stops, 300))


def test_ar1(pair):
    eps = np.random.default_rng(1).standard_normal(1000)
    a, b = (k.ar1_filter(eps, 0.8, 0.2) for k in pair)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_ensemble_same_under_both_backends(backend):
    s = make_series(150, 2, seed=2)
    grid = EvaluationGrid(np.linspace(0, 20, 9))
    cfg = EstimatorConfig(KernelSpec("gaussian", 2.0), "local-linear", mean_grid=40)
    ens = bootstrap_ensemble(s, build_block_plan(s, "moving", 5), cfg, grid, 8, seed=4, workers=2)
    ref = np.load(REF) if os.path.exists(REF) else None
    if ref is None:
        np.save(REF, ens.covariances)
    else:
        assert np.allclose(ens.covariances, ref, rtol=1e-10, atol=1e-14)


REF = os.path.join(os.environ.get("PYTEST_TMPDIR", "/tmp"), "condcov_backend_ref.npy")


@pytest.fixture(autouse=True, scope="module")
def _clean_ref():
    if os.path.exists(REF):
        os.remove(REF)
    yield
    if os.path.exists(REF):
        os.remove(REF)


def test_env_flag_selects_numpy():
    code = "import condcov; print(condcov.backend_name())"
    env = dict(os.environ, CONDCOV_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert backend_name() in ("numba", "numpy")
