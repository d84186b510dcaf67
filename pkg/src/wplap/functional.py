"""Discrete energy I = I1 - I2 - I3, its exact gradient, norms and geometry constants.

The gradient term is assembled per cell from the 2**N corner gradients (each
corner sees the N cell edges meeting there) and averaged, with omega taken
at the cell centre.  Lower-order terms use nodal quadrature on interior
nodes.  The residual is the exact derivative of this discrete functional, so
<I'(u), phi> = residual(u) @ phi for every nodal phi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DivergenceError, ParameterError, SeedDegenerateError
from .grid import Field, cell_omega
from .weights import balance_exponents, validate_exponents, weight_integral

__all__ = [
    "GRAD_FLOOR",
    "ProblemParams",
    "EnergyBreakdown",
    "GeometryConstants",
    "EnergyModel",
    "energy",
    "residual",
    "e_norm",
    "full_norm",
    "lqv_norm",
    "embedding_constant",
    "mp_radius",
    "sphere_bound",
    "lambda_threshold",
    "omega_integral_term",
    "lower_bound_diagnostic",
    "geometry_constants",
    "fibering_threshold",
]

# cells whose |grad_w u|**p falls below this contribute nothing to the residual
GRAD_FLOOR = 1e-30
MIN_SOLVER_P = 1.2


@dataclass(frozen=True)
class ProblemParams:
    p: float
    q: float
    gamma: float
    mu: float
    n: int
    m: int
    validated: bool = False

    def __post_init__(self):
        N = self.n + self.m
        if not 1 < self.p < N:
            raise ParameterError(f"need 1 < p < n + m, got p = {self.p}")
        if not self.q > self.p:
            raise ParameterError("need q > p")
        if not self.gamma > 1:
            raise ParameterError("need gamma > 1")
        if self.mu < 0:
            raise ParameterError("need mu >= 0")

    @classmethod
    def checked(cls, p, q, gamma, mu, n, m, v_is_multiple_of_omega=False):
        """Construct after validate_exponents; raises ParameterError on violations."""
        verdict = validate_exponents(p, q, gamma, mu, n, m, v_is_multiple_of_omega)
        if not verdict.valid:
            raise ParameterError("; ".join(verdict.violations))
        return cls(float(p), float(q), float(gamma), float(mu), n, m, validated=True)

    @property
    def p_conj(self):
        return self.p / (self.p - 1.0)


@dataclass
class EnergyBreakdown:
    I1: float
    I2: float
    I3: float
    I: float

    def to_json(self):
        return asdict(self)


@dataclass
class GeometryConstants:
    embedding_A: float
    C0: float
    mp_radius: float
    lam: float
    sphere_bound: float
    lower_bound_diagnostic: float
    R: float
    x0: list

    def to_json(self):
        return {"embedding_A": self.embedding_A, "C0": self.C0,
                "mp_radius": self.mp_radius, "lambda": self.lam,
                "sphere_bound": self.sphere_bound,
                "lower_bound_diagnostic": self.lower_bound_diagnostic,
                "R": self.R, "x0": list(self.x0)}


class EnergyModel:
    """Precomputed discretization of I on a grid for fixed weights and parameters."""

    def __init__(self, grid, omega, v, params, floor=GRAD_FLOOR):
        if grid.n != params.n or grid.m != params.m:
            raise ParameterError("grid split (n, m) does not match the parameters")
        self.grid = grid
        self.omega = omega
        self.v = v
        self.params = params
        self.floor = floor
        p = params.p
        self.lo, self.hi = grid.corner_edges
        self.h = grid.spacing
        self.n_corners = self.lo.shape[0]
        self.cell_weight = grid.cell_volume / self.n_corners
        w_cell = cell_omega(grid, omega)
        self.axis_weight = np.ones((grid.N, w_cell.size))
        self.axis_weight[:grid.n] = w_cell ** (2.0 / p)
        self.node_volume = grid.cell_volume
        xi = grid.interior_coords()[:, :grid.n]
        self.v_nodes = v.evaluate_perturbed(xi, grid.spacing[0] / 2)
        self._precond = None
        self._precond_lu = None

    # -- gradient term ----------------------------------------------------
    def _edges(self, u):
        U = self.grid.embed(u)
        return (U[self.hi] - U[self.lo]) / self.h[None, :, None]

    def _modsq(self, G):
        return np.sum(self.axis_weight[None] * G ** 2, axis=1)

    def gradient_integral(self, u):
        """Sum over cells of |grad_w u|**p times the cell volume."""
        s = self._modsq(self._edges(u))
        return self.cell_weight * float(np.sum(s ** (self.params.p / 2.0)))

    def parts(self, u):
        P = self.params
        up = np.maximum(u, 0.0)
        I1 = self.gradient_integral(u) / P.p
        I2 = self.node_volume * float(np.sum(self.v_nodes * up ** P.q)) / P.q
        I3 = P.mu * self.node_volume * float(np.sum(up ** P.gamma)) / P.gamma
        return I1, I2, I3

    def energy(self, u):
        I1, I2, I3 = self.parts(u)
        return I1 - I2 - I3

    def energy_extended(self, u):
        """I(u) accumulated in long double, for difference quotients.

        Same discretization as :meth:`energy`; only the rounding floor drops
        (to about 1e-19 on x86, no change where long double is double).
        """
        ld = np.longdouble
        P = self.params
        u = np.asarray(u, dtype=ld)
        U = np.zeros(int(np.prod(self.grid.shape)), dtype=ld)
        U[self.grid.interior_index] = u
        G = (U[self.hi] - U[self.lo]) / self.h.astype(ld)[None, :, None]
        s = np.sum(self.axis_weight.astype(ld)[None] * G ** 2, axis=1)
        I1 = ld(self.cell_weight) * np.sum(s ** (ld(P.p) / 2)) / ld(P.p)
        up = np.maximum(u, ld(0))
        vol = ld(self.node_volume)
        I2 = vol * np.sum(self.v_nodes.astype(ld) * up ** ld(P.q)) / ld(P.q)
        I3 = ld(P.mu) * vol * np.sum(up ** ld(P.gamma)) / ld(P.gamma)
        return I1 - I2 - I3

    def breakdown(self, u):
        I1, I2, I3 = self.parts(u)
        return EnergyBreakdown(I1, I2, I3, I1 - I2 - I3)

    def _scatter(self, dG):
        # adjoint of the edge-difference map, restricted to interior nodes
        w = dG / self.h[None, :, None]
        size = int(np.prod(self.grid.shape))
        full = (np.bincount(self.hi.reshape(-1), weights=w.reshape(-1), minlength=size)
                - np.bincount(self.lo.reshape(-1), weights=w.reshape(-1), minlength=size))
        return full[self.grid.interior_index]

    def gradient_residual(self, u):
        """Derivative of I1 alone."""
        p = self.params.p
        G = self._edges(u)
        s = self._modsq(G)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(s ** (p / 2.0) < self.floor, 0.0, s ** (p / 2.0 - 1.0))
        dG = self.cell_weight * coef[:, None, :] * self.axis_weight[None] * G
        return self._scatter(dG)

    def residual(self, u):
        P = self.params
        if P.p < MIN_SOLVER_P:
            raise ParameterError(f"residual needs p >= {MIN_SOLVER_P}")
        up = np.maximum(u, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            low = self.v_nodes * up ** (P.q - 1.0) + P.mu * np.where(
                up > 0, up ** (P.gamma - 1.0), 0.0)
        return self.gradient_residual(u) - self.node_volume * low

    def hessian(self, u):
        """Exact sparse Hessian of the discrete I (interior nodes)."""
        P = self.params
        p = P.p
        G = self._edges(u)
        s = self._modsq(G)
        with np.errstate(divide="ignore", invalid="ignore"):
            live = s ** (p / 2.0) >= self.floor
            a = np.where(live, s ** (p / 2.0 - 1.0), 0.0) * self.cell_weight
            b = np.where(live, (p - 2.0) * s ** (p / 2.0 - 2.0), 0.0) * self.cell_weight
        WG = self.axis_weight[None] * G
        H = self._assemble(lambda k, l: (a * self.axis_weight[k][None] * (k == l)
                                         + b * WG[:, k] * WG[:, l]))
        up = np.maximum(u, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = self.v_nodes * (P.q - 1.0) * np.where(up > 0, up ** (P.q - 2.0), 0.0)
            d += P.mu * (P.gamma - 1.0) * np.where(up > 0, up ** (P.gamma - 2.0), 0.0)
        return (H - sp.diags(self.node_volume * d)).tocsc()

    def _assemble(self, coef):
        N = self.grid.N
        f2i = self.grid.full_to_interior
        rows, cols, vals = [], [], []
        for k in range(N):
            for l in range(N):
                c = coef(k, l) / (self.h[k] * self.h[l])
                if not np.any(c):
                    continue
                for rk, sk in ((self.hi[:, k], 1.0), (self.lo[:, k], -1.0)):
                    for cl, sl in ((self.hi[:, l], 1.0), (self.lo[:, l], -1.0)):
                        rows.append(f2i[rk].reshape(-1))
                        cols.append(f2i[cl].reshape(-1))
                        vals.append((sk * sl * c).reshape(-1))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = (rows >= 0) & (cols >= 0)
        n = self.grid.n_interior
        return sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()

    # -- metric ---------------------------------------------------------------
    @property
    def preconditioner(self):
        """SPD matrix of the quadratic form sum |grad_w u|**2 (p = 2 metric)."""
        if self._precond is None:
            self._precond = self._assemble(
                lambda k, l: self.cell_weight * self.axis_weight[k][None]
                * np.ones((self.n_corners, 1)) * (k == l)).tocsc()
        return self._precond

    def precondition(self, g):
        if self._precond_lu is None:
            self._precond_lu = spla.splu(self.preconditioner)
        return self._precond_lu.solve(g)

    def metric_norm(self, u):
        return math.sqrt(max(float(u @ (self.preconditioner @ u)), 0.0))

    def dual_norm(self, g):
        return math.sqrt(max(float(g @ self.precondition(g)), 0.0))

    def e_norm(self, u):
        return self.gradient_integral(u) ** (1.0 / self.params.p)

    def integral_pos_gamma(self, u):
        return self.node_volume * float(np.sum(np.maximum(u, 0.0) ** self.params.gamma))

    def integral_v_pos_q(self, u):
        return self.node_volume * float(np.sum(self.v_nodes * np.maximum(u, 0.0) ** self.params.q))


def _model(u, omega, v, params):
    return EnergyModel(u.grid, omega, v, params)


def energy(u, omega, v, params):
    return _model(u, omega, v, params).breakdown(u.values)


def residual(u, omega, v, params):
    return Field(u.grid, _model(u, omega, v, params).residual(u.values))


def e_norm(u, omega, params):
    """(integral of |grad_w u|**p)**(1/p); equals (p * I1)**(1/p)."""
    model = EnergyModel(u.grid, omega, omega, params)
    return model.e_norm(u.values)


def full_norm(u, omega, params):
    """Diagnostic two-term norm ||u||_Lp + || |grad_w u| ||_Lp."""
    lp = (u.grid.cell_volume * np.sum(np.abs(u.values) ** params.p)) ** (1.0 / params.p)
    return float(lp) + e_norm(u, omega, params)


def lqv_norm(u, v, q):
    xi = u.grid.interior_coords()[:, :u.grid.n]
    vn = v.evaluate_perturbed(xi, u.grid.spacing[0] / 2)
    return float(u.grid.cell_volume * np.sum(vn * np.abs(u.values) ** q)) ** (1.0 / q)


# ---------------------------------------------------------------------------
# geometry constants


def embedding_constant(R, x0, omega, v, params, C0=1.0, resolution=256):
    """C0 R**e_r v(Q_R)**(1/q) / omega(Q_R)**e_w over the x-ball Q_R(x0)."""
    P = params
    e_r, e_w = balance_exponents(P.p, P.q, P.n, P.m)
    vq = weight_integral(v, x0, R, resolution)
    wq = weight_integral(omega, x0, R, resolution)
    if not (math.isfinite(vq) and math.isfinite(wq)):
        raise DivergenceError("weight integral over Q_R diverges")
    return C0 * R ** e_r * vq ** (1.0 / P.q) / wq ** e_w


def _base(A, p, q):
    return (q / (4.0 * p)) ** (1.0 / q) / A


def mp_radius(A, p, q):
    """Radius where (1/q) A**q rho**(q-p) = 1/(4p)."""
    if q == p:
        raise ParameterError("mountain-pass radius needs q != p")
    return _base(A, p, q) ** (q / (q - p))


def sphere_bound(A, p, q):
    """Lower bound for I on the sphere of radius mp_radius."""
    if q == p:
        raise ParameterError("sphere bound needs q != p")
    return _base(A, p, q) ** (p * q / (q - p)) / (2.0 * p)


def omega_integral_term(grid, omega, params, resolution=256):
    """Integral over the box of (1 + omega**(-p'/p))."""
    sigma = omega.pow(-params.p_conj / params.p)
    edges = [np.linspace(a, b, resolution + 1) for a, b in grid.bounds[:grid.n]]
    x_int = float(np.sum(sigma.cell_integrals(edges)))
    y_vol = float(np.prod([b - a for a, b in grid.bounds[grid.n:]]))
    x_vol = float(np.prod([b - a for a, b in grid.bounds[:grid.n]]))
    total = y_vol * (x_vol + x_int)
    if not math.isfinite(total):
        raise DivergenceError("omega**(-p'/p) is not integrable over the domain")
    return total


def lambda_threshold(A, params, volume, omega_term):
    """Upper bound for mu, evaluated exactly as printed (exponent q(2-p)/(q-p))."""
    P = params
    N = P.n + P.m
    if not math.isfinite(omega_term):
        raise DivergenceError("omega term diverges")
    return (_base(A, P.p, P.q) ** (P.q * (2.0 - P.p) / (P.q - P.p))
            * volume ** (P.gamma / N - 1.0)
            * omega_term ** (-P.gamma / P.p_conj))


def lower_bound_diagnostic(R, params, volume, omega_term, C0=1.0):
    """Verbatim lower bound -(mu R**gamma / gamma) C |Omega|**(1-gamma/N') ||1+sigma||**(gamma/p')."""
    P = params
    N = P.n + P.m
    n_conj = N / (N - 1.0)
    return (-(P.mu * R ** P.gamma / P.gamma) * C0 * volume ** (1.0 - P.gamma / n_conj)
            * omega_term ** (P.gamma / P.p_conj))


def geometry_constants(grid, omega, v, params, R=None, x0=None, C0=1.0, resolution=256):
    """All mountain-pass geometry constants for a box domain.

    Defaults: R is the Euclidean circumradius of the box and x0 the x-part of
    its centre.
    """
    centre = np.array([(a + b) / 2 for a, b in grid.bounds])
    if R is None:
        R = float(np.linalg.norm([(b - a) / 2 for a, b in grid.bounds]))
    if x0 is None:
        x0 = centre[:grid.n]
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    A = embedding_constant(R, x0, omega, v, params, C0, resolution)
    term = omega_integral_term(grid, omega, params, resolution)
    lam = lambda_threshold(A, params, grid.volume, term)
    if params.mu >= lam:
        warnings.warn(f"mu = {params.mu} is not below the threshold {lam:.6g}",
                      stacklevel=2)
    return GeometryConstants(
        embedding_A=A, C0=C0, mp_radius=mp_radius(A, params.p, params.q), lam=lam,
        sphere_bound=sphere_bound(A, params.p, params.q),
        lower_bound_diagnostic=lower_bound_diagnostic(R, params, grid.volume, term, C0),
        R=float(R), x0=[float(x) for x in x0])


def fibering_threshold(u_bar, model):
    """t* = (int u_+**gamma / (gamma ||u||_E**p))**(1/(p - gamma))."""
    P = model.params
    if P.gamma >= P.p:
        raise ParameterError("fibering threshold needs gamma < p")
    num = model.integral_pos_gamma(u_bar.values)
    if num <= 0:
        raise SeedDegenerateError("seed has no positive part")
    norm_p = model.gradient_integral(u_bar.values)
    return (num / (P.gamma * norm_p)) ** (1.0 / (P.p - P.gamma))
