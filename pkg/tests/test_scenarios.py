import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shs_sentinel.errors import ScenarioError
from shs_sentinel.grid_model import build_small_signal_model, numerical_rank
from shs_sentinel.scenarios import (
    CatalogSpec,
    ContingencyClass,
    ContingencyScenario,
    Identity,
    InputLoss,
    InputScale,
    LineOutage,
    SensorLoss,
    SensorScale,
    apply_contingency,
    build_catalog,
    class_of,
    controllability_matrix,
    controllability_rank,
    observability_rank,
    quantize_parameter_range,
    removable_lines,
    scale_input,
    scale_sensor,
)


def test_default_catalog_counts(catalog):
    counts = catalog.class_counts()
    assert catalog.m == 93
    assert counts == {ContingencyClass.NORMAL: 1, ContingencyClass.PHYSICAL: 28,
                      ContingencyClass.CONTROL: 32, ContingencyClass.MEASUREMENT: 32}


def test_alpha_ranges_by_class(catalog):
    assert catalog.alphas_of(ContingencyClass.NORMAL) == (1,)
    assert catalog.alphas_of(ContingencyClass.PHYSICAL) == tuple(range(2, 30))
    assert catalog.alphas_of(ContingencyClass.CONTROL) == tuple(range(30, 62))
    assert catalog.alphas_of(ContingencyClass.MEASUREMENT) == tuple(range(62, 94))


def test_outages_are_first_removable_lines(grid, catalog):
    lines = [catalog.scenario(a).transform.line_id for a in range(2, 30)]
    assert lines == removable_lines(grid)[:28]
    assert lines == [f"L{i}" for i in range(2, 30)]


def test_outage_models_pairwise_distinct(catalog):
    As = [catalog.model(a).A for a in range(2, 30)]
    for i in range(len(As)):
        for j in range(i + 1, len(As)):
            assert np.max(np.abs(As[i] - As[j])) > 1e-9


def test_control_block_is_input_major(catalog):
    t = [catalog.scenario(a).transform for a in range(30, 38)]
    assert all(getattr(x, "index", None) == 0 for x in t)
    assert isinstance(t[-1], InputLoss)
    assert [x.factor for x in t[:-1]] == [1.25, 1.5, 1.75, 2.0, 0.75, 0.5, 0.25]


def test_sensor_factors(catalog):
    f = [catalog.scenario(a).transform for a in range(62, 78)]
    assert [x.factor for x in f] == quantize_parameter_range(0.2, 1.8, 0.1)
    assert all(x.index == 0 for x in f)


def test_quantize_examples():
    q = quantize_parameter_range(0.2, 1.8, 0.1)
    assert len(q) == 16 and 1.0 not in q
    assert q[0] == 0.2 and q[-1] == 1.8
    assert quantize_parameter_range(0.5, 1.5, 0.5) == [0.5, 1.5]
    with pytest.raises(ScenarioError):
        quantize_parameter_range(1.0, 1.0, 0.1)
    with pytest.raises(ScenarioError):
        quantize_parameter_range(0.0, 1.0, 0.0)


def test_catalog_of_size_one(grid, nominal):
    c = build_catalog(grid, nominal, CatalogSpec.empty())
    assert c.m == 1 and c.scenario(1).cls == ContingencyClass.NORMAL


def test_too_many_outages_requested(toy_grid, toy_model):
    with pytest.raises(ScenarioError, match="only"):
        build_catalog(toy_grid, toy_model, CatalogSpec(outage_count=10))


def test_toy_single_outage_differs_in_coupling(toy_grid, toy_model):
    c = build_catalog(toy_grid, toy_model, CatalogSpec(outage_lines=("L1",)))
    A = c.model(2).A
    hand = build_small_signal_model(toy_grid, {"L2", "L3", "L4"}).A
    assert np.array_equal(A, hand)
    changed = np.argwhere(A != toy_model.A)
    assert all(r % 2 == 1 and col % 2 == 0 for r, col in changed)


def test_class_matrix_ownership(catalog, nominal):
    for s in catalog.scenarios:
        m = catalog.model(s.alpha)
        same = (np.array_equal(m.A, nominal.A), np.array_equal(m.B, nominal.B),
                np.array_equal(m.C, nominal.C))
        expected = {
            ContingencyClass.NORMAL: (True, True, True),
            ContingencyClass.PHYSICAL: (False, True, True),
            ContingencyClass.CONTROL: (True, False, True),
            ContingencyClass.MEASUREMENT: (True, True, False),
        }[s.cls]
        assert same == expected, s


def test_input_loss_zeroes_column(nominal):
    m = apply_contingency(nominal, None, InputLoss(2))
    assert np.all(m.B[:, 2] == 0.0)
    assert np.array_equal(np.delete(m.B, 2, axis=1), np.delete(nominal.B, 2, axis=1))


def test_sensor_loss_zeroes_row(nominal):
    m = apply_contingency(nominal, None, SensorLoss(0))
    assert np.all(m.C[0] == 0.0) and np.array_equal(m.C[1], nominal.C[1])


def test_scale_rule_equivalence(nominal):
    # [B2]_i u'_i = [B1]_i u_i with u_i = f u'_i
    f = 1.75
    m = apply_contingency(nominal, None, InputScale(1, f))
    u_prime = 0.3
    assert np.allclose(m.B[:, 1] * u_prime, nominal.B[:, 1] * (f * u_prime), rtol=1e-15, atol=0)


def test_factor_validation():
    with pytest.raises(ScenarioError):
        InputScale(0, 1.0)
    with pytest.raises(ScenarioError):
        SensorScale(0, -0.5)
    with pytest.raises(ScenarioError):
        InputScale(0, float("nan"))
    assert isinstance(scale_input(0, 0.0), InputLoss)
    assert isinstance(scale_sensor(1, 0.0), SensorLoss)


def test_out_of_range_index(nominal):
    with pytest.raises(ScenarioError):
        apply_contingency(nominal, None, InputScale(7, 2.0))
    with pytest.raises(ScenarioError):
        apply_contingency(nominal, None, SensorScale(2, 2.0))


def test_unknown_line(grid, nominal):
    with pytest.raises(ScenarioError):
        apply_contingency(nominal, grid, LineOutage("L999"))


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        ContingencyScenario(2, ContingencyClass.CONTROL, LineOutage("L2"))
    with pytest.raises(ScenarioError):
        ContingencyScenario(1, ContingencyClass.PHYSICAL, LineOutage("L2"))
    with pytest.raises(ScenarioError):
        ContingencyScenario(0, ContingencyClass.NORMAL, Identity())


def test_class_of_mapping():
    assert class_of(Identity()) == ContingencyClass.NORMAL
    assert class_of(LineOutage("x")) == ContingencyClass.PHYSICAL
    assert class_of(InputLoss(0)) == ContingencyClass.CONTROL
    assert class_of(SensorScale(0, 2.0)) == ContingencyClass.MEASUREMENT
    assert ContingencyClass.parse("physical") == ContingencyClass.PHYSICAL
    with pytest.raises(ScenarioError):
        ContingencyClass.parse("nope")


def test_outage_scenarios_keep_full_rank(catalog):
    for a in catalog.alphas_of(ContingencyClass.PHYSICAL):
        m = catalog.model(a)
        assert controllability_rank(m) == 8
        assert observability_rank(m) == 8


def test_controllability_matrix_oracle(nominal):
    A, B = nominal.A, nominal.B
    W = controllability_matrix(A, B)
    oracle = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(8)])
    assert np.allclose(W, oracle, rtol=1e-12, atol=0)


def test_input_loss_keeps_rank_via_other_inputs(nominal):
    # each generator is still coupled to the others through the network
    m = apply_contingency(nominal, None, InputLoss(0))
    assert controllability_rank(m) == 8


def test_manifest_csv(catalog):
    text = catalog.manifest_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "alpha,class,transform,parameter"
    assert len(lines) == 94
    assert lines[2].startswith("2,Physical,LineOutage:L2")


def test_fingerprint_stable(grid, nominal, catalog):
    again = build_catalog(grid, nominal)
    assert again.fingerprint() == catalog.fingerprint()
    small = build_catalog(grid, nominal, CatalogSpec.empty())
    assert small.fingerprint() != catalog.fingerprint()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 3.0).filter(lambda f: abs(f - 1.0) > 1e-6), st.integers(0, 3))
def test_input_transform_only_touches_one_column(nominal, f, i):
    m = apply_contingency(nominal, None, scale_input(i, f))
    for j in range(4):
        if j != i:
            assert np.array_equal(m.B[:, j], nominal.B[:, j])
    assert np.allclose(m.B[:, i], nominal.B[:, i] * f)


def test_explicit_outage_list(toy_grid, toy_model):
    c = build_catalog(toy_grid, toy_model, CatalogSpec(outage_lines=("L2", "L4")))
    assert [s.transform for s in c.scenarios[1:]] == [LineOutage("L2"), LineOutage("L4")]
    with pytest.raises(ScenarioError):
        build_catalog(toy_grid, toy_model, CatalogSpec(outage_lines=("Lx",)))


def test_rank_of_controllability_after_two_losses_drops():
    # single generator on an infinite bus: losing its only input kills controllability
    A = np.array([[0.0, 1.0], [-2.0, -0.5]])
    B = np.array([[0.0], [1.0]])
    assert numerical_rank(controllability_matrix(A, B * 0.0))[0] == 0
    assert numerical_rank(controllability_matrix(A, B))[0] == 2
