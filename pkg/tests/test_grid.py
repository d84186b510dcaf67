import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wplap.errors import ConfigError
from wplap.grid import (
    Field, build_grid, load_field, negative_part, positive_part, save_field, weighted_gradient,
)
from wplap.weights import Weight

UNIT = Weight.constant(1.0)


def test_interior_counts():
    assert build_grid(1, 1, [(0, 1), (0, 1)], [5, 5]).n_interior == 9
    assert build_grid(1, 1, [(0, 1), (0, 1)], [3, 3]).n_interior == 1
    assert build_grid(2, 1, [(0, 1)] * 3, [4, 5, 6]).n_interior == 2 * 3 * 4


@pytest.mark.parametrize("bounds,counts", [
    ([(0, 1)], [5, 5]),
    ([(0, 1), (0, 1)], [2, 5]),
    ([(0, 1), (1, 1)], [5, 5]),
])
def test_bad_domains(bounds, counts):
    with pytest.raises(ConfigError):
        build_grid(1, 1, bounds, counts)


def test_zero_field_zero_gradient():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [7, 7])
    cg = weighted_gradient(Field(g, np.zeros(g.n_interior)), UNIT, 2.0)
    assert not cg.gx.any() and not cg.gy.any()


def test_ramp_gradient_away_from_boundary():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [41, 41])
    a = 2.5
    u = Field(g, a * g.interior_coords()[:, 0])
    cg = weighted_gradient(u, UNIT, 2.0)
    centres = g.cell_centers()
    h = g.spacing
    inner = np.all((centres > 2 * h) & (centres < 1 - 2 * h), axis=1)
    assert np.allclose(cg.gx[inner, 0], a, atol=1e-12)
    assert np.allclose(cg.gy[inner, 0], 0.0, atol=1e-12)


def _quadratic_error(k):
    g = build_grid(1, 1, [(0, 1), (0, 1)], [k, k])
    xy = g.interior_coords()
    u = Field(g, xy[:, 0] * (1 - xy[:, 0]) * xy[:, 1] * (1 - xy[:, 1]))
    cg = weighted_gradient(u, UNIT, 2.0)
    c = g.cell_centers()
    exact = (1 - 2 * c[:, 0]) * c[:, 1] * (1 - c[:, 1])
    return np.max(np.abs(cg.gx[:, 0] - exact))


def test_gradient_refinement_halves_error():
    # the quadratic vanishes on the boundary, so no boundary layer
    e1, e2 = _quadratic_error(17), _quadratic_error(33)
    assert e2 <= 0.55 * e1


def test_modulus_uses_omega_power():
    g = build_grid(1, 1, [(1, 2), (0, 1)], [9, 9])
    xy = g.interior_coords()
    u = Field(g, np.sin(np.pi * (xy[:, 0] - 1)) * np.sin(np.pi * xy[:, 1]))
    p = 1.5
    cg = weighted_gradient(u, Weight.power(0.7), p)
    xc = g.cell_centers()[:, 0]
    expected = np.sqrt(xc ** (1.4 / p) * cg.gx[:, 0] ** 2 + cg.gy[:, 0] ** 2)
    assert np.allclose(cg.modulus(), expected, rtol=1e-14)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2 ** 16))
@settings(max_examples=30, deadline=None)
def test_gradient_linear(a, b, seed):
    g = build_grid(1, 1, [(0, 1), (0, 2)], [6, 7])
    rng = np.random.default_rng(seed)
    u = Field(g, rng.normal(size=g.n_interior))
    v = Field(g, rng.normal(size=g.n_interior))
    lhs = weighted_gradient(a * u + b * v, UNIT, 2.0)
    gu, gv = weighted_gradient(u, UNIT, 2.0), weighted_gradient(v, UNIT, 2.0)
    assert np.allclose(lhs.gx, a * gu.gx + b * gv.gx, atol=1e-11)
    assert np.allclose(lhs.gy, a * gu.gy + b * gv.gy, atol=1e-11)


@given(arrays(float, 9, elements=st.floats(-1e6, 1e6)))
@settings(max_examples=50, deadline=None)
def test_positive_negative_decomposition(vals):
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    u = Field(g, vals)
    up, um = positive_part(u), negative_part(u)
    assert np.array_equal(up.values - um.values, u.values)
    assert np.all(up.values * um.values == 0)
    assert np.all(up.values >= 0) and np.all(um.values >= 0)
    assert np.array_equal(positive_part(-u).values, um.values)


def test_nonnegative_field_has_no_negative_part():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    assert not negative_part(Field(g, np.arange(9.0))).values.any()


def test_field_csv_round_trip(tmp_path):
    g = build_grid(2, 1, [(0, 1), (-1, 1), (0, 2)], [4, 5, 3])
    u = Field(g, np.random.default_rng(3).normal(size=g.n_interior))
    path = tmp_path / "u.csv"
    save_field(path, u)
    back = load_field(path, g)
    assert np.array_equal(back.values, u.values)
    with pytest.raises(ValueError):
        load_field(path, build_grid(2, 1, [(0, 1), (-1, 1), (0, 2)], [4, 5, 4]))


def test_field_rejects_wrong_shape_and_nan():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    with pytest.raises(ValueError):
        Field(g, np.zeros(8))
    with pytest.raises(ValueError):
        Field(g, np.full(9, np.nan))
