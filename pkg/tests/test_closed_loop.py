import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from shs_sentinel.closed_loop import (
    DEFAULT_CONTROLLER_POLES,
    DEFAULT_OBSERVER_POLES,
    GainSet,
    assemble_closed_loop,
    design_gains,
    eigen_signature,
    eigen_table_csv,
    format_complex,
    infer_class_from_signature,
    place_poles,
    spectrum_mismatch,
)
from shs_sentinel.errors import DimensionError, PlacementError
from shs_sentinel.grid_model import StateSpaceModel
from shs_sentinel.scenarios import ContingencyClass, InputScale, SensorScale, apply_contingency

# sup_t ||exp((A+GC) t)|| exp(7 t) for the nominal IEEE-33 observer, measured
# once with the bundled grid and default poles (7079.05), rounded up
OBSERVER_KAPPA = 7.1e3


def _matched_max_rel(a, b):
    # independent oracle: relative distance after assignment on |a - b|
    a, b = np.sort_complex(np.asarray(a, complex)), np.asarray(b, complex)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(np.max(cost[r, c] / np.maximum(np.abs(a[r]), 1e-300)))


def test_double_integrator_by_hand():
    F = place_poles(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]), [-1.0, -2.0])
    assert np.allclose(F, [[-2.0, -3.0]], atol=1e-10)


def test_observer_poles_on_nominal(nominal, gains):
    ev = sla.eigvals(nominal.A + gains.G @ nominal.C)
    assert _matched_max_rel(ev, DEFAULT_OBSERVER_POLES) < 1e-6


def test_controller_poles_on_nominal(nominal, gains):
    ev = sla.eigvals(nominal.A + nominal.B @ gains.K)
    assert _matched_max_rel(ev, DEFAULT_CONTROLLER_POLES) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_random_controllable_placement(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 2))
    re = -rng.uniform(0.5, 5.0, 2)
    im = rng.uniform(0.1, 2.0)
    poles = [re[0] + 1j * im, re[0] - 1j * im, re[1], re[1] - 1.0]
    F = place_poles(A, B, poles)
    # recompute through the Schur form instead of eigvals
    T, _ = sla.schur(A + B @ F, output="complex")
    assert _matched_max_rel(np.diag(T), poles) < 1e-6


def test_uncontrollable_pair_rejected():
    A = np.diag([-1.0, -2.0])
    B = np.array([[1.0], [0.0]])
    with pytest.raises(PlacementError, match="controllable"):
        place_poles(A, B, [-3.0, -4.0])


def test_non_conjugate_poles_rejected():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(PlacementError, match="conjugat"):
        place_poles(A, B, [-1 + 1j, -2 + 1j])


def test_wrong_pole_count(nominal):
    with pytest.raises(PlacementError):
        place_poles(nominal.A, nominal.B, [-1.0, -2.0])


def test_unstable_request_rejected(nominal):
    with pytest.raises(PlacementError, match="stable"):
        design_gains(nominal, tuple(-1.0 - i for i in range(7)) + (0.5,))


def test_scalar_closed_loop_by_substitution():
    m = StateSpaceModel([[2.0]], [[3.0]], [[5.0]])
    g = GainSet(np.array([[-7.0]]), np.array([[-11.0]]), (), ())
    cl = assemble_closed_loop(m, g)
    a, b, c, k, gg = 2.0, 3.0, 5.0, -7.0, -11.0
    assert np.allclose(cl.A_cl, [[a + b * k, -b * k], [0.0, a + gg * c]])
    assert np.allclose(cl.B_cl, [[b, 0.0], [0.0, gg]])
    assert np.allclose(cl.C_cl, [[c, 0.0], [1.0, -1.0]])


def test_sixteen_state_block_structure(nominal, gains):
    cl = assemble_closed_loop(nominal, gains)
    n = 8
    assert cl.A_cl.shape == (16, 16) and cl.B_cl.shape == (16, 6) and cl.C_cl.shape == (10, 16)
    A, B, C, K, G = nominal.A, nominal.B, nominal.C, gains.K, gains.G
    assert np.allclose(cl.A_cl[:n, :n], A + B @ K)
    assert np.allclose(cl.A_cl[:n, n:], -B @ K)
    assert np.all(cl.A_cl[n:, :n] == 0)
    assert np.allclose(cl.A_cl[n:, n:], A + G @ C)
    assert np.array_equal(cl.C_cl[:2, :n], C) and np.all(cl.C_cl[:2, n:] == 0)
    assert np.array_equal(cl.C_cl[2:], np.hstack([np.eye(n), -np.eye(n)]))


def test_nominal_closed_loop_stable(loops):
    assert loops[1].stable


def test_dimension_mismatch(nominal, toy_gains):
    with pytest.raises(DimensionError):
        assemble_closed_loop(nominal, toy_gains)


def test_block_triangular_spectrum_every_scenario(loops):
    for a, cl in loops.items():
        direct = sla.eigvals(cl.A_cl)
        assert spectrum_mismatch(direct, cl.eigenvalues) < 1e-8, a


def test_signature_examples(nominal, grid, gains, loops):
    nom = loops[1]
    assert eigen_signature(loops[2], nom) == (True, True)
    assert eigen_signature(loops[1], nom) == (False, False)
    s = assemble_closed_loop(apply_contingency(nominal, grid, SensorScale(0, 1.5)), gains)
    c = assemble_closed_loop(apply_contingency(nominal, grid, InputScale(2, 1.2)), gains)
    assert eigen_signature(s, nom) == (False, True)
    assert eigen_signature(c, nom) == (True, False)


@pytest.mark.parametrize("sig, cls", [
    ((True, True), ContingencyClass.PHYSICAL),
    ((False, False), ContingencyClass.NORMAL),
    ((True, False), ContingencyClass.CONTROL),
    ((False, True), ContingencyClass.MEASUREMENT),
])
def test_infer_class(sig, cls):
    assert infer_class_from_signature(sig) == cls


def test_taxonomy_exhaustive(catalog, loops):
    for s in catalog.scenarios:
        assert infer_class_from_signature(eigen_signature(loops[s.alpha], loops[1])) == s.cls


def test_gains_are_reused_not_redesigned(catalog, gains, loops):
    # the K/G blocks recovered from any scenario's A_cl equal the nominal gains
    for a in (2, 35, 70):
        cl = loops[a]
        m = catalog.model(a)
        BK = -cl.A_cl[:8, 8:]
        assert np.allclose(BK, m.B @ gains.K)
        assert np.allclose(cl.A_cl[8:, 8:] - m.A, gains.G @ m.C)


def test_observer_convergence_bound(nominal, gains):
    Ao = nominal.A + gains.G @ nominal.C
    lam = max(np.real(DEFAULT_OBSERVER_POLES))
    x0 = np.random.default_rng(3).standard_normal(8)
    for t in np.linspace(0.0, 3.0, 61):
        xt = sla.expm(Ao * t) @ x0
        assert np.linalg.norm(xt) <= OBSERVER_KAPPA * np.exp(lam * t) * np.linalg.norm(x0)


def test_spectrum_mismatch_basics():
    assert spectrum_mismatch([1, 2], [2, 1]) == 0.0
    assert spectrum_mismatch([1], [1, 2]) == np.inf
    assert spectrum_mismatch([1.0], [1.0 + 1e-7]) == pytest.approx(1e-7, rel=1e-3)


def test_format_complex():
    assert format_complex(-1.096) == "-1.096+0i"
    assert format_complex(-0.339 + 0.054j) == "-0.339+0.054i"
    assert format_complex(1 - 2j) == "1-2i"


def test_eigen_table_layout(catalog, gains, loops):
    rows = eigen_table_csv(catalog, gains, loops).strip().splitlines()
    assert rows[0].split(",")[:3] == ["section", "index", "alpha_1"]
    assert len(rows[0].split(",")) == 2 + 93
    assert len(rows) == 1 + 16
    lam2 = [r.split(",")[2] for r in rows[9:]]
    assert lam2 == ["-15+0i", "-14+0i", "-13+0i", "-12+0i", "-11+0i", "-9+0i", "-8+0i", "-7+0i"]
