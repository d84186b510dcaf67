import math

import numpy as np
import pytest

from wplap.functional import EnergyModel, ProblemParams, geometry_constants
from wplap.grid import Field, build_grid
from wplap.solver import seed_field
from wplap.verify import (
    _embedding_ratios, fibering_scan, gradient_order_check, oracle_suite, poincare_check,
    random_fields, shape_fields, sphere_bound_check,
)
from wplap.weights import Weight

UNIT = Weight.constant(1.0)
UNIT2 = Weight.constant(1.0, 2)
P1 = ProblemParams(1.5, 3.0, 1.3, 0.05, 1, 1)


@pytest.fixture(scope="module")
def demo():
    grid = build_grid(2, 1, [(0, 1)] * 3, [17] * 3)
    params = ProblemParams(2.0, 4.0, 1.3, 0.01, 2, 1)
    model = EnergyModel(grid, UNIT2, UNIT2, params)
    geo = geometry_constants(grid, UNIT2, UNIT2, params)
    return model, geo


def test_random_fields_same_functions_on_refined_grid():
    g1 = build_grid(1, 1, [(0, 1), (0, 1)], [17, 17])
    g2 = build_grid(1, 1, [(0, 1), (0, 1)], [33, 33])
    f1, f2 = random_fields(g1, 3, seed=4), random_fields(g2, 3, seed=4)
    for a, b in zip(f1, f2):
        assert np.allclose(a.full(), b.full()[::2, ::2], atol=1e-14)
    assert np.array_equal(random_fields(g1, 2, seed=4)[1].values, f1[1].values)


def test_shape_fields_zero_boundary():
    g = build_grid(2, 1, [(0, 1), (-1, 1), (0, 2)], [9, 9, 9])
    fs = shape_fields(g)
    assert len(fs) == 10 and all(np.any(f.values) for f in fs)


def test_embedding_ratio_homogeneous_and_zero():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [9, 9])
    fields = random_fields(g, 4, seed=1)
    r1 = _embedding_ratios(g, UNIT, UNIT, P1, 1.0, fields)
    r2 = _embedding_ratios(g, UNIT, UNIT, P1, 1.0, [2.5 * f for f in fields])
    assert np.allclose(r1, r2, rtol=1e-13)
    z = Field(g, np.zeros(g.n_interior))
    assert _embedding_ratios(g, UNIT, UNIT, P1, 1.0, [z])[0] == 0.0


def test_poincare_unit_weights_stable():
    rep = poincare_check(UNIT, UNIT, P1, [(0, 1), (0, 1)], [17, 17], samples=100, levels=2)
    assert math.isfinite(rep.max_ratio) and rep.max_ratio > 0
    assert rep.stable
    assert [t["counts"] for t in rep.trend] == [[17, 17], [33, 33]]
    assert (rep.violating is None) == (rep.max_ratio <= 1)


def test_fibering_polynomial_identity(demo):
    model, geo = demo
    prof = fibering_scan(seed_field(model, geo.mp_radius), model, np.geomspace(1e-3, 1e3, 200),
                         geo.mp_radius)
    assert prof.max_rel_error <= 1e-12


def test_fibering_three_bands_on_wide_scan(demo):
    model, geo = demo
    prof = fibering_scan(seed_field(model, geo.mp_radius), model, np.geomspace(1e-6, 1e3, 200),
                         geo.mp_radius)
    s = prof.structure()
    assert s["three_bands"], prof.bands()
    assert [b[0] for b in prof.bands()] == [-1, 1, -1]


def test_fibering_mu_zero_single_sign_change():
    grid = build_grid(2, 1, [(0, 1)] * 3, [9] * 3)
    params = ProblemParams(2.0, 4.0, 1.3, 0.0, 2, 1)
    model = EnergyModel(grid, UNIT2, UNIT2, params)
    u = seed_field(model, 1.0)
    prof = fibering_scan(u, model, np.geomspace(1e-6, 1e3, 200))
    assert [b[0] for b in prof.bands()] == [1, -1]
    assert not prof.structure()["negative_small_t"]


def test_sphere_bound_with_empirical_constant(demo):
    model, geo = demo
    rep = sphere_bound_check(model, geo, samples=50, seed=0)
    assert rep.extra["norm_rel_error"] <= 1e-12
    emp = poincare_check(UNIT2, UNIT2, model.params, model.grid.bounds, [9, 9, 9],
                         samples=50, levels=1).max_ratio
    rep2 = sphere_bound_check(model, geo, samples=50, seed=0, C0=emp)
    assert rep2.violating is None and rep2.extra["min_I"] >= rep2.extra["bound"]
    with pytest.raises(ValueError):
        sphere_bound_check(model, geo, samples=0)


def test_gradient_order_check_passes():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [17, 17])
    chk = gradient_order_check(EnergyModel(g, UNIT, UNIT, P1), pairs=20, seed=0)
    assert chk.passed(), chk.to_json()
    assert chk.min_slope >= 1.9 and chk.max_final_error <= 1e-6


def test_oracle_suite_passes_and_is_deterministic():
    a = [r.to_json() for r in oracle_suite()]
    assert all(r["passed"] for r in a), a
    assert [r["name"] for r in a] == ["ap_interval_scan", "balance_refinement",
                                      "h_closed_form", "k0_two_seed", "gradient_order"]
    b = [r.to_json() for r in oracle_suite()]
    assert a == b


def test_inequality_report_records_max(demo):
    model, geo = demo
    rep = sphere_bound_check(model, geo, samples=20, seed=3)
    js = rep.to_json()
    assert js["samples"] == 20 and js["inequality"] == "sphere_bound"


def test_empirical_lambda_is_sharp_over_samples():
    grid = build_grid(2, 1, [(0, 1)] * 3, [9] * 3)
    base = ProblemParams(2.0, 4.0, 1.3, 0.01, 2, 1)
    geo = geometry_constants(grid, UNIT2, UNIT2, base)
    lam = sphere_bound_check(EnergyModel(grid, UNIT2, UNIT2, base), geo, samples=20,
                             seed=0).extra["lambda_empirical"]
    assert 0 < lam < np.inf
    for factor, positive in ((0.999, True), (1.001, False)):
        P = ProblemParams(2.0, 4.0, 1.3, lam * factor, 2, 1)
        rep = sphere_bound_check(EnergyModel(grid, UNIT2, UNIT2, P), geo, samples=20, seed=0)
        assert (rep.extra["min_I"] > 0) == positive
