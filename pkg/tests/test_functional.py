import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from wplap.errors import ParameterError, SeedDegenerateError
from wplap.functional import (
    EnergyModel, ProblemParams, e_norm, embedding_constant, energy, fibering_threshold,
    geometry_constants, lambda_threshold, lqv_norm, mp_radius, omega_integral_term, residual,
    sphere_bound,
)
from wplap.grid import Field, build_grid
from wplap.weights import Weight, balance_exponents

UNIT = Weight.constant(1.0)


def hat(grid, node=None):
    vals = np.zeros(grid.n_interior)
    vals[grid.n_interior // 2 if node is None else node] = 1.0
    return Field(grid, vals)


def loop_energy(U, h, omega_cell, p, q, gamma, mu, v_node):
    """Straight-loop re-implementation on a 2-d node array U (n = m = 1)."""
    nx, ny = U.shape
    I1 = 0.0
    for i in range(nx - 1):
        for j in range(ny - 1):
            w = omega_cell(i, j) ** (2.0 / p)
            acc = 0.0
            for a, b in itertools.product((0, 1), repeat=2):
                gx = (U[i + 1, j + b] - U[i, j + b]) / h[0]
                gy = (U[i + a, j + 1] - U[i + a, j]) / h[1]
                acc += (w * gx * gx + gy * gy) ** (p / 2)
            I1 += acc / 4 * h[0] * h[1]
    I2 = I3 = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            up = max(U[i, j], 0.0)
            I2 += v_node(i, j) * up ** q * h[0] * h[1]
            I3 += up ** gamma * h[0] * h[1]
    return I1 / p - I2 / q - mu * I3 / gamma


def test_hat_energy_matches_loop_oracle():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    P = ProblemParams(1.5, 3.0, 1.2, 0.1, 1, 1)
    u = hat(g)
    ref = loop_energy(u.full(), g.spacing, lambda i, j: 1.0, 1.5, 3.0, 1.2, 0.1,
                      lambda i, j: 1.0)
    assert energy(u, UNIT, UNIT, P).I == pytest.approx(ref, abs=1e-12)


def test_weighted_random_energy_matches_loop_oracle():
    g = build_grid(1, 1, [(0.5, 2), (-1, 1)], [7, 6])
    P = ProblemParams(1.7, 3.0, 1.3, 0.2, 1, 1)
    om, v = Weight.power(0.4), Weight.power(-0.3)
    u = Field(g, np.random.default_rng(1).normal(size=g.n_interior))
    ax = g.axes
    ref = loop_energy(u.full(), g.spacing,
                      lambda i, j: (0.5 * (ax[0][i] + ax[0][i + 1])) ** 0.4,
                      1.7, 3.0, 1.3, 0.2, lambda i, j: ax[0][i] ** -0.3)
    assert energy(u, om, v, P).I == pytest.approx(ref, rel=1e-12)


def test_zero_and_nonpositive_fields():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [6, 6])
    P = ProblemParams(1.5, 3.0, 1.2, 0.1, 1, 1)
    z = Field(g, np.zeros(g.n_interior))
    b = energy(z, UNIT, UNIT, P)
    assert (b.I1, b.I2, b.I3, b.I) == (0.0, 0.0, 0.0, 0.0)
    assert not residual(z, UNIT, UNIT, P).values.any()
    neg = Field(g, -np.abs(np.random.default_rng(0).normal(size=g.n_interior)))
    b = energy(neg, UNIT, UNIT, P)
    assert b.I2 == 0 and b.I3 == 0 and b.I == b.I1 > 0


@given(seed=st.integers(0, 2 ** 20), t=st.floats(0.01, 20.0))
@settings(max_examples=40, deadline=None)
def test_breakdown_and_fibering_identity(seed, t):
    g = build_grid(1, 1, [(-1, 1), (-1, 1)], [7, 7])
    P = ProblemParams(1.5, 3.0, 1.3, 0.05, 1, 1)
    model = EnergyModel(g, Weight.power(0.3), Weight.power(0.2), P)
    u = np.random.default_rng(seed).normal(size=g.n_interior)
    I1, I2, I3 = model.parts(u)
    assert model.energy(u) == I1 - I2 - I3
    assert model.e_norm(u) ** P.p == pytest.approx(P.p * I1, rel=1e-12)
    a = model.gradient_integral(u)
    b = model.integral_v_pos_q(u)
    c = model.integral_pos_gamma(u)
    poly = t ** P.p * a / P.p - t ** P.q * b / P.q - P.mu * t ** P.gamma * c / P.gamma
    scale = t ** P.p * a / P.p + t ** P.q * b / P.q + P.mu * t ** P.gamma * c / P.gamma
    assert abs(model.energy(t * u) - poly) <= 1e-12 * scale


@given(seed=st.integers(0, 2 ** 20), t=st.floats(0.1, 10.0))
@settings(max_examples=30, deadline=None)
def test_gradient_term_homogeneity(seed, t):
    g = build_grid(1, 1, [(0, 1), (0, 1)], [6, 6])
    model = EnergyModel(g, UNIT, UNIT, ProblemParams(1.5, 3.0, 1.3, 0.05, 1, 1))
    u = np.random.default_rng(seed).normal(size=g.n_interior)
    assert np.allclose(model.gradient_residual(t * u),
                       t ** 0.5 * model.gradient_residual(u), rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("p", [1.3, 1.5, 1.9])
def test_residual_central_difference(p):
    g = build_grid(1, 1, [(-1, 1), (-1, 1)], [9, 9])
    P = ProblemParams(p, 3.2, 1.3, 0.1, 1, 1)
    model = EnergyModel(g, Weight.power(0.3), Weight.power(0.2), P)
    rng = np.random.default_rng(7)
    xy = g.interior_coords()
    u = 1.0 + 2 * xy[:, 0] + 3 * xy[:, 1] + 0.01 * rng.normal(size=g.n_interior)
    phi = np.cos(xy[:, 0]) * np.sin(2 * xy[:, 1] + 0.3)
    exact = model.residual(u) @ phi
    errs = []
    for h in (1e-3, 1e-4, 1e-5):
        fd = (model.energy_extended(u + h * phi) - model.energy_extended(u - h * phi)) / (2 * h)
        errs.append(abs(float(fd) - exact) / abs(exact))
    slope = np.polyfit(np.log([1e-3, 1e-4]), np.log(errs[:2]), 1)[0]
    assert slope > 1.9
    assert errs[-1] < 1e-8


def test_hessian_matches_residual_differences():
    g = build_grid(1, 1, [(-1, 1), (-1, 1)], [7, 8])
    model = EnergyModel(g, Weight.power(0.3), Weight.power(0.2),
                        ProblemParams(1.8, 3.0, 1.3, 0.1, 1, 1))
    xy = g.interior_coords()
    u = 1.0 + xy[:, 0] + 2 * xy[:, 1]
    phi = np.sin(3 * xy[:, 0] + xy[:, 1])
    h = 1e-6
    fd = (model.residual(u + h * phi) - model.residual(u - h * phi)) / (2 * h)
    assert np.allclose(model.hessian(u) @ phi, fd, rtol=1e-6, atol=1e-8)


def test_residual_rejects_small_p():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    model = EnergyModel(g, UNIT, UNIT, ProblemParams(1.1, 3.0, 1.05, 0.1, 1, 1))
    with pytest.raises(ParameterError):
        model.residual(np.ones(9))


def test_e_norm_sine_converges():
    exact = math.sqrt(3 * math.pi ** 2 / 8)  # p = 2, u = prod sin(pi z_i) on the unit cube
    errs = []
    for k in (9, 17):
        g = build_grid(2, 1, [(0, 1)] * 3, [k] * 3)
        u = Field(g, np.prod(np.sin(np.pi * g.interior_coords()), axis=1))
        errs.append(abs(e_norm(u, Weight.constant(1.0, 2),
                               ProblemParams(2.0, 3.0, 1.3, 0.1, 2, 1)) - exact))
    assert errs[1] < errs[0] / 3.5


@given(t=st.floats(-10, 10))
@settings(max_examples=25, deadline=None)
def test_norm_homogeneity(t):
    g = build_grid(1, 1, [(0, 1), (0, 1)], [6, 6])
    u = Field(g, np.random.default_rng(2).normal(size=g.n_interior))
    P = ProblemParams(1.5, 3.0, 1.3, 0.1, 1, 1)
    assert e_norm(t * u, UNIT, P) == pytest.approx(abs(t) * e_norm(u, UNIT, P), rel=1e-12)
    assert lqv_norm(t * u, UNIT, 3.0) == pytest.approx(abs(t) * lqv_norm(u, UNIT, 3.0),
                                                       rel=1e-12)


def test_lqv_hat():
    g = build_grid(1, 1, [(0, 1), (0, 1)], [5, 5])
    assert lqv_norm(hat(g), UNIT, 3.0) == pytest.approx((1 / 16) ** (1 / 3), abs=1e-12)
    assert lqv_norm(Field(g, np.zeros(9)), UNIT, 3.0) == 0.0


# -- geometry constants ----------------------------------------------------

P_UNIT = ProblemParams(1.5, 3.0, 1.3, 0.01, 1, 1)


def test_embedding_unit_exponent_arithmetic():
    R = 1.0
    A = embedding_constant(R, [0.0], UNIT, UNIT, P_UNIT)
    ref = R ** (1 - (5 / 3) * (1 / 3)) * (2 * R) ** (1 / 3) / (2 * R) ** (4 / 9)
    assert A == pytest.approx(ref, rel=1e-12)


def test_embedding_homogeneity():
    A = embedding_constant(0.8, [0.1], Weight.power(0.3), Weight.power(0.2), P_UNIT)
    Av = embedding_constant(0.8, [0.1], Weight.power(0.3), Weight.power(0.2, scale=2), P_UNIT)
    Aw = embedding_constant(0.8, [0.1], Weight.power(0.3, scale=2), Weight.power(0.2), P_UNIT)
    e_w = balance_exponents(1.5, 3.0, 1, 1)[1]
    assert Av / A == pytest.approx(2 ** (1 / 3), rel=1e-13)
    assert Aw / A == pytest.approx(2 ** -e_w, rel=1e-13)


@given(A=st.floats(0.01, 100), p=st.floats(1.2, 3.0), dq=st.floats(0.2, 4.0))
@settings(max_examples=60, deadline=None)
def test_mp_radius_balance_and_sphere_bound(A, p, dq):
    q = p + dq
    rho = mp_radius(A, p, q)
    assert (A ** q * rho ** (q - p) / q) == pytest.approx(1 / (4 * p), rel=1e-10)
    assert sphere_bound(A, p, q) == pytest.approx(rho ** p / (2 * p), rel=1e-10)
    assert mp_radius(A, p, q) == rho  # pure


def test_mp_radius_root_finding_oracle():
    A = embedding_constant(1.0, [0.0], UNIT, UNIT, P_UNIT)
    root = brentq(lambda r: A ** 3 * r ** 1.5 / 3 - 1 / 6, 1e-9, 1e9, xtol=1e-15, rtol=1e-15)
    assert mp_radius(A, 1.5, 3.0) == pytest.approx(root, rel=1e-12)


def test_mp_radius_decreases_with_v():
    rs = [mp_radius(embedding_constant(1.0, [0.0], UNIT, Weight.constant(c), P_UNIT), 1.5, 3.0)
          for c in (0.5, 1.0, 2.0)]
    assert rs[0] > rs[1] > rs[2]


def test_q_equals_p_rejected():
    with pytest.raises(ParameterError):
        mp_radius(1.0, 2.0, 2.0)
    with pytest.raises(ParameterError):
        sphere_bound(1.0, 2.0, 2.0)


def test_lambda_unit_oracle():
    g = build_grid(1, 1, [(-1, 1), (-1, 1)], [5, 5])
    term = omega_integral_term(g, UNIT, P_UNIT)
    assert term == pytest.approx(8.0, rel=1e-14)  # |Omega| (1 + 1)
    A = 1.7
    lam = lambda_threshold(A, P_UNIT, 4.0, term)
    base = (3 / 6) ** (1 / 3) / A
    ref = base ** (3 * 0.5 / 1.5) * 4.0 ** (1.3 / 2 - 1) * 8.0 ** (-1.3 / 3)
    assert lam == pytest.approx(ref, rel=1e-12)


def test_geometry_warns_when_mu_too_large():
    g = build_grid(1, 1, [(-1, 1), (-1, 1)], [5, 5])
    with pytest.warns(UserWarning, match="threshold"):
        geometry_constants(g, UNIT, UNIT, ProblemParams(1.5, 3.0, 1.3, 50.0, 1, 1))


def test_fibering_threshold_scaling_and_realisation():
    g = build_grid(2, 1, [(0, 1)] * 3, [7, 7, 7])
    # mu large enough that p mu > 2**(gamma - p): the t*/2 point is then negative
    P = ProblemParams(2.0, 3.0, 1.3, 1.0, 2, 1)
    unit2 = Weight.constant(1.0, 2)
    model = EnergyModel(g, unit2, unit2, P)
    u = hat(g)
    t = fibering_threshold(u, model)
    assert fibering_threshold(2 * u, model) == pytest.approx(t / 2, rel=1e-13)
    assert model.energy(t / 2 * u.values) < 0
    with pytest.raises(SeedDegenerateError):
        fibering_threshold(-1 * u, model)
    with pytest.raises(ParameterError):
        fibering_threshold(u, EnergyModel(g, unit2, unit2, ProblemParams(1.5, 3.0, 1.6, 1.0, 2, 1)))


def test_checked_params():
    assert ProblemParams.checked(2, 4, 1.3, 0.01, 2, 1).validated
    with pytest.raises(ParameterError, match="q"):
        ProblemParams.checked(2, 7, 1.3, 0.01, 2, 1)
    with pytest.raises(ParameterError):
        ProblemParams(3.5, 4, 1.3, 0.01, 2, 1)
