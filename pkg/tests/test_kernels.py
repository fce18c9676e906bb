import os
import subprocess
import sys

import numpy as np
import pytest

from shs_sentinel import _kernels_py, kernels

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture
def problem():
    rng = np.random.default_rng(17)
    nz, q, o, N = 6, 3, 4, 40
    Ad = 0.3 * rng.standard_normal((nz, nz))
    Bd = rng.standard_normal((nz, q))
    C = rng.standard_normal((o, nz))
    D = rng.standard_normal((o, q))
    return Ad, Bd, C, D, rng.standard_normal(nz), rng.standard_normal((N, q))


def _loop_reference(Ad, Bd, C, D, z0, w):
    z = z0.copy()
    Y = []
    for row in w:
        Y.append(C @ z + D @ row)
        z = Ad @ z + Bd @ row
    return np.array(Y), z


def test_compiled_backend_is_default_when_built():
    if "cython" in BACKENDS and os.environ.get("SHS_SENTINEL_PURE", "") in ("", "0"):
        assert kernels.BACKEND == "cython"
    else:
        assert kernels.BACKEND == "python"


def test_pure_env_forces_fallback():
    out = subprocess.run(
        [sys.executable, "-c", "from shs_sentinel import kernels; print(kernels.BACKEND)"],
        env={**os.environ, "SHS_SENTINEL_PURE": "1"}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("backend", BACKENDS)
def test_simulate_lti(problem, backend):
    impl = kernels.available_backends()[backend]
    Y, z = impl.simulate_lti(*problem)
    Yr, zr = _loop_reference(*problem)
    assert np.allclose(Y, Yr, rtol=1e-13, atol=1e-13) and np.allclose(z, zr, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("backend", BACKENDS)
def test_propagate(problem, backend):
    impl = kernels.available_backends()[backend]
    Ad, Bd, _, _, z0, w = problem
    assert np.allclose(impl.propagate(Ad, Bd, z0, w), _loop_reference(*problem)[1], rtol=1e-13)


@pytest.mark.parametrize("backend", BACKENDS)
def test_scan_and_residuals(backend):
    impl = kernels.available_backends()[backend]
    rng = np.random.default_rng(3)
    m, L, n = 12, 50, 4
    forced = rng.standard_normal((m, L))
    free = rng.standard_normal((m, L, n))
    x0 = rng.standard_normal(n)
    y = forced[7] + free[7] @ x0 + 1e-3 * rng.standard_normal(L)
    cand = np.array([2, 7, 9, 11])
    res = impl.residuals_all(forced, free, x0, y, cand, 30)
    ref = [np.sum((y[:30] - forced[c, :30] - free[c, :30] @ x0) ** 2) for c in cand]
    assert np.allclose(res, ref, rtol=1e-12)
    pos, best = impl.residual_scan(forced, free, x0, y, cand, 30)
    assert pos == 1 and best == pytest.approx(ref[1], rel=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_scan_tie_takes_first(backend):
    impl = kernels.available_backends()[backend]
    forced = np.zeros((3, 5))
    free = np.zeros((3, 5, 2))
    pos, res = impl.residual_scan(forced, free, np.zeros(2), np.ones(5), np.array([2, 0, 1]), 5)
    assert pos == 0 and res == 5.0


@pytest.mark.parametrize("backend", BACKENDS)
def test_sq_distances(backend):
    impl = kernels.available_backends()[backend]
    pts = np.random.default_rng(5).standard_normal((20, 6))
    q = np.ones(6)
    assert np.allclose(impl.sq_distances(pts, q), ((pts - q) ** 2).sum(axis=1), rtol=1e-14)


def test_read_only_inputs_accepted(problem):
    Ad, Bd, C, D, z0, w = (np.array(a) for a in problem)
    for a in (Ad, Bd, C, D, z0, w):
        a.setflags(write=False)
    for impl in kernels.available_backends().values():
        impl.simulate_lti(Ad, Bd, C, D, z0, w)


def test_backends_identical_on_closed_loop(loops):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    from shs_sentinel.simulator import discretize, make_probe, ProbeSpec
    dm = discretize(loops[1], 0.001)
    w = np.hstack([make_probe(ProbeSpec(), 0.08, 0.001, 4), np.zeros((80, 2))])
    a = kernels.available_backends()["cython"].simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, np.zeros(16), w)
    b = _kernels_py.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, np.zeros(16), w)
    assert np.allclose(a[0], b[0], rtol=1e-12, atol=1e-14)
