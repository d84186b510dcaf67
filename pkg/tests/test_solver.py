import numpy as np
import pytest

from wplap.errors import NoNegativeMinimumError, SeedDegenerateError
from wplap.functional import EnergyModel, ProblemParams, geometry_constants
from wplap.grid import Field, build_grid
from wplap.solver import (
    SolverConfig, find_far_point, find_local_min, mountain_pass, positivity_certificate,
    project_to_ball, seed_field, solve, weakform_check, write_log,
)
from wplap.weights import Weight

UNIT2 = Weight.constant(1.0, 2)


def demo_setup(mu=0.01, counts=17):
    grid = build_grid(2, 1, [(0, 1)] * 3, [counts] * 3)
    params = ProblemParams(2.0, 4.0, 1.3, mu, 2, 1)
    model = EnergyModel(grid, UNIT2, UNIT2, params)
    geo = geometry_constants(grid, UNIT2, UNIT2, params)
    return grid, params, model, geo


@pytest.fixture(scope="module")
def demo():
    grid, params, model, geo = demo_setup()
    res = solve(grid, UNIT2, UNIT2, params)
    return model, geo, res


@pytest.fixture(scope="module")
def small():
    return demo_setup(counts=9)


# -- projection ----------------------------------------------------------------

def test_project_to_ball(small):
    grid, _, model, geo = small
    rho = geo.mp_radius
    u = seed_field(model, rho)
    inside = 0.5 * u
    assert project_to_ball(inside, rho, model) is inside
    big = project_to_ball(2 * u, rho, model)
    assert model.e_norm(big.values) == pytest.approx(rho, rel=1e-12)
    again = project_to_ball(big, rho, model)
    assert np.array_equal(again.values, big.values)


# -- local minimum ---------------------------------------------------------

def test_local_min_demo(demo):
    model, geo, res = demo
    u1 = res.u1
    assert res.energy1.I < 0
    assert model.e_norm(u1.values) <= geo.mp_radius * (1 + 1e-12)
    assert np.min(u1.values) >= -1e-10


def test_local_min_log_strictly_decreasing(demo):
    _, _, res = demo
    main = [row["I"] for row in res.min_log if not row.get("polish")]
    assert all(b < a for a, b in zip(main, main[1:]))


def test_local_min_is_fixed_point(demo):
    model, geo, res = demo
    u, _ = find_local_min(res.u1, geo, SolverConfig(), model)
    assert abs(model.energy(u.values) - res.energy1.I) < 1e-12


def test_local_min_restarts_agree(small):
    grid, _, model, geo = small
    rng = np.random.default_rng(0)
    base = seed_field(model, geo.mp_radius).values
    energies = []
    for _ in range(5):
        seed = Field(grid, base * rng.uniform(0.5, 1.5, grid.n_interior))
        u, _ = find_local_min(seed, geo, SolverConfig(), model)
        energies.append(model.energy(u.values))
    assert max(energies) - min(energies) < 1e-6
    assert max(energies) < 0


def test_local_min_critical_point(small):
    grid, _, model, geo = small
    u, _ = find_local_min(seed_field(model, geo.mp_radius), geo, SolverConfig(), model)
    # the minimizer lies strictly inside the ball, so it is a free critical point
    assert weakform_check(u, model) <= 10 * SolverConfig().gtol


def test_mu_zero_has_no_negative_minimum():
    grid, _, model, geo = demo_setup(mu=0.0, counts=9)
    seed = seed_field(model, geo.mp_radius)
    with pytest.raises(NoNegativeMinimumError) as info:
        find_local_min(seed, geo, SolverConfig(), model)
    assert model.energy(info.value.field.values) >= 0


# -- far point / mountain pass --------------------------------------------

def test_far_point_hat(small):
    grid, _, model, geo = small
    vals = np.zeros(grid.n_interior)
    vals[grid.n_interior // 2] = 1.0
    far = find_far_point(Field(grid, vals), SolverConfig(), model, geo.mp_radius)
    assert model.energy(far.values) < 0
    assert model.e_norm(far.values) > 2 * geo.mp_radius
    with pytest.raises(SeedDegenerateError):
        find_far_point(Field(grid, -vals), SolverConfig(), model, geo.mp_radius)


def test_mountain_pass_demo(demo):
    model, geo, res = demo
    assert res.energy0.I > 0
    assert res.residual0 <= 1e-6
    assert res.distinctness > 1e-3 * max(res.norm0, res.norm1)
    tops = [row["I"] for row in res.path_log if not row.get("polish")]
    assert all(b <= a for a, b in zip(tops, tops[1:]))


def test_mountain_pass_endpoints_fixed(small):
    grid, _, model, geo = small
    cfg = SolverConfig()
    far = find_far_point(seed_field(model, geo.mp_radius), cfg, model, geo.mp_radius)
    before = far.values.copy()
    u0, log = mountain_pass(far, geo, cfg, model)
    assert np.array_equal(far.values, before)
    assert model.energy(u0.values) > 0 and log


def test_solve_checks(demo):
    _, _, res = demo
    assert res.success, res.checks
    js = res.to_json()
    assert js["I1"] < 0 < js["I0"]


# -- certificates / weak form ------------------------------------------------

def test_positivity_certificate(small):
    grid, params, model, _ = small
    u = Field(grid, np.abs(np.random.default_rng(1).normal(size=grid.n_interior)))
    assert positivity_certificate(u, model).passed
    vals = u.values.copy()
    vals[5] = -1.0
    cert = positivity_certificate(Field(grid, vals), model)
    assert cert.min_value == -1.0 and not cert.passed
    assert cert.neg_integral == pytest.approx(1.0 * grid.cell_volume, rel=1e-14)
    assert positivity_certificate(Field(grid, np.maximum(vals, 0)), model).passed


def test_weakform_zero_and_scaling(small):
    grid, _, model, _ = small
    z = Field(grid, np.zeros(grid.n_interior))
    assert weakform_check(z, model) == 0.0
    rng = np.random.default_rng(2)
    u = Field(grid, rng.uniform(0, 1, grid.n_interior))
    tests = [Field(grid, rng.normal(size=grid.n_interior)) for _ in range(5)]
    a = weakform_check(u, model, tests, include_hats=False)
    b = weakform_check(u, model, [2 * t for t in tests], include_hats=False)
    assert b == pytest.approx(a, rel=1e-14)


# -- determinism / config ----------------------------------------------------

def test_solve_deterministic(tmp_path):
    grid, params, *_ = demo_setup(counts=9)
    runs = []
    for k in range(2):
        res = solve(grid, UNIT2, UNIT2, params)
        write_log(tmp_path / f"min{k}.csv", res.min_log)
        write_log(tmp_path / f"path{k}.csv", res.path_log)
        runs.append(res)
    assert (tmp_path / "min0.csv").read_bytes() == (tmp_path / "min1.csv").read_bytes()
    assert (tmp_path / "path0.csv").read_bytes() == (tmp_path / "path1.csv").read_bytes()
    assert np.array_equal(runs[0].u0.values, runs[1].u0.values)


@pytest.mark.parametrize("kw", [{"gtol": 0}, {"path_nodes": 4}, {"armijo_c": 0.7},
                                {"backtrack": 1.0}])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)
