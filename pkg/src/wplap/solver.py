"""Two positive critical points of the discrete energy.

u1 minimizes I over the E-ball of radius rho (projected, preconditioned
gradient descent with Armijo backtracking, then an optional Newton polish);
u0 is a mountain-pass point found by deforming a discrete path from 0 to a
far point of negative energy, again finished by Newton.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy import optimize

from .errors import (MountainPassError, NoNegativeMinimumError, SeedDegenerateError,
                     SolverError, StallError)
from .functional import EnergyModel, fibering_threshold, geometry_constants
from .grid import Field

__all__ = [
    "SolverConfig",
    "SolveResult",
    "PositivityCertificate",
    "seed_field",
    "project_to_ball",
    "find_local_min",
    "find_far_point",
    "mountain_pass",
    "positivity_certificate",
    "hat_norms",
    "default_test_set",
    "weakform_check",
    "write_log",
    "solve",
]


@dataclass
class SolverConfig:
    max_iter: int = 500
    gtol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    path_nodes: int = 16
    path_step: float = 1.0
    path_tol: float = 1e-3
    path_max_iter: int = 300
    max_restarts: int = 3
    polish: int = 40
    sphere_slack: float = 0.9
    distinct_rel: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.gtol > 0:
            raise ValueError("gradient tolerance must be positive")
        if self.path_nodes < 8:
            raise ValueError("path needs at least 8 nodes")
        if not 0 < self.armijo_c <= 0.5:
            raise ValueError("Armijo slope fraction must lie in (0, 0.5]")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class PositivityCertificate:
    min_value: float
    neg_integral: float
    tol: float

    @property
    def passed(self):
        return self.min_value >= -self.tol and self.neg_integral <= self.tol

    def to_json(self):
        return {"min_value": self.min_value, "neg_integral": self.neg_integral,
                "tol": self.tol, "passed": self.passed}


@dataclass
class SolveResult:
    u0: Field | None
    u1: Field | None
    energy0: object = None
    energy1: object = None
    residual0: float = math.nan
    residual1: float = math.nan
    positivity0: PositivityCertificate | None = None
    positivity1: PositivityCertificate | None = None
    norm0: float = math.nan
    norm1: float = math.nan
    distinctness: float = math.nan
    geometry: object = None
    min_log: list = field(default_factory=list)
    path_log: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def success(self):
        return bool(self.checks) and all(self.checks.values())

    def to_json(self):
        def e(b):
            return None if b is None else b.to_json()

        return {
            "I1": None if self.energy1 is None else self.energy1.I,
            "I0": None if self.energy0 is None else self.energy0.I,
            "u1": {"energy": e(self.energy1), "residual": _num(self.residual1),
                   "norm_E": _num(self.norm1), "positivity": e(self.positivity1)},
            "u0": {"energy": e(self.energy0), "residual": _num(self.residual0),
                   "norm_E": _num(self.norm0), "positivity": e(self.positivity0)},
            "distinctness": _num(self.distinctness),
            "geometry": e(self.geometry),
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "errors": dict(self.errors),
            "notes": dict(self.notes),
            "success": self.success,
            "iterations": {"local_min": len(self.min_log), "path": len(self.path_log)},
        }


def _num(x):
    return float(x) if x is not None and math.isfinite(x) else None


def seed_field(model, rho):
    """Product of sines vanishing on the box boundary, scaled to ||u||_E = rho."""
    grid = model.grid
    z = grid.interior_coords()
    vals = np.ones(len(z))
    for k, (a, b) in enumerate(grid.bounds):
        vals *= np.sin(np.pi * (z[:, k] - a) / (b - a))
    return Field(grid, vals * (rho / model.e_norm(vals)))


def project_to_ball(u, rho, model):
    """Radial projection onto {||u||_E <= rho} (exact: the norm is 1-homogeneous)."""
    norm = model.e_norm(u.values)
    if norm <= rho:
        return u
    return Field(u.grid, u.values * (rho / norm))


def _project(values, rho, model):
    norm = model.e_norm(values)
    return values if norm <= rho else values * (rho / norm)


def _newton_polish(model, u, iters, gtol, accept=None):
    """Damped Newton on the residual; merit is its dual norm."""
    g = model.residual(u)
    merit = model.dual_norm(g)
    log = []
    for it in range(iters):
        if merit <= gtol * 1e-3:
            break
        H = model.hessian(u)
        try:
            step = spla.splu(H).solve(-g)
        except RuntimeError:
            break
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        for _ in range(40):
            cand = u + t * step
            gc = model.residual(cand)
            mc = model.dual_norm(gc)
            if np.isfinite(mc) and mc < merit and (accept is None or accept(cand)):
                break
            t *= 0.5
        else:
            break
        u, g, merit = cand, gc, mc
        log.append({"iteration": it, "I": model.energy(u), "gnorm": merit, "step": t})
    return u, merit, log


def find_local_min(seed, geometry, config, model):
    """Minimize I over the ball of radius rho, starting on the fibering ray of ``seed``.

    Returns the minimizer and the iteration log.  Raises
    :class:`NoNegativeMinimumError` when the limit has I >= 0.
    """
    rho = geometry.mp_radius
    t_star = fibering_threshold(seed, model)
    t = min(t_star / 2.0, rho / model.e_norm(seed.values))
    u = seed.values * t
    energy = model.energy(u)
    alpha = 1.0
    log = []
    pg_norm = math.inf
    for it in range(config.max_iter):
        g = model.residual(u)
        d = -model.precondition(g)
        pg = _project(u + d, rho, model) - u
        pg_norm = model.metric_norm(pg)
        log.append({"iteration": it, "I": energy, "gnorm": pg_norm, "step": alpha})
        if pg_norm <= config.gtol:
            break
        alpha = min(1.0, 2.0 * alpha)
        for _ in range(config.max_backtracks):
            cand = _project(u + alpha * d, rho, model)
            e_c = model.energy(cand)
            if e_c <= energy + config.armijo_c * float(g @ (cand - u)) and e_c < energy:
                break
            alpha *= config.backtrack
        else:
            if pg_norm <= 10 * config.gtol:
                break
            raise StallError(f"no Armijo step after {config.max_backtracks} backtracks "
                             f"(I = {energy:.6g}, projected gradient {pg_norm:.3g})")
        u, energy = cand, e_c
    if config.polish:
        inside = lambda w: model.e_norm(w) <= rho and model.energy(w) <= energy + 1e-14 * abs(energy)
        u_pol, merit, plog = _newton_polish(model, u, config.polish, config.gtol, inside)
        if plog:
            u = u_pol
            energy = model.energy(u)
            base = len(log)
            for row in plog:
                row["iteration"] += base
                row["polish"] = True
            log.extend(plog)
    u1 = Field(model.grid, u)
    if not energy < 0:
        err = NoNegativeMinimumError(
            f"constrained minimum has I = {energy:.6g} >= 0 (mu = {model.params.mu})")
        err.field = u1
        err.log = log
        raise err
    return u1, log


def find_far_point(direction, config, model, rho):
    """Scale ``direction`` by powers of two until I < 0 and the norm exceeds 2 rho."""
    if model.integral_v_pos_q(direction.values) <= 0:
        raise SeedDegenerateError("direction has no positive part")
    norm = model.e_norm(direction.values)
    t = 1.0
    while t <= 2.0 ** 60:
        if model.energy(t * direction.values) < 0 and t * norm > 2 * rho:
            return Field(direction.grid, t * direction.values)
        t *= 2.0
    raise SeedDegenerateError("no negative-energy point found below t = 2**60")


def _connector_max(a, b, model, samples=9):
    return max(model.energy(a + s * (b - a)) for s in np.linspace(0.0, 1.0, samples))


def _ray_top(w, u_far, model, rho, nodes):
    """Maximum of I on the path 0 -> T w -> u_far.

    T comes from the far-point search and is doubled until the connector
    T w -> u_far stays in {I < 0}, so the path maximum is attained on the ray.
    """
    far = find_far_point(Field(model.grid, w), None, model, rho).values
    while _connector_max(far, u_far, model) >= 0:
        far = 2.0 * far
        if model.e_norm(far) > 2.0 ** 60 * model.e_norm(w):
            raise SeedDegenerateError("cannot connect the ray to the far endpoint")
    energies = np.array([model.energy((j / nodes) * far) for j in range(1, nodes)])
    k = int(np.argmax(energies)) + 1
    scale = model.e_norm(far) / model.e_norm(w)
    lo, hi = (k - 1) / nodes * scale, (k + 1) / nodes * scale
    res = optimize.minimize_scalar(lambda t: -model.energy(t * w), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10 * hi})
    return res.x * w, float(-res.fun), k


def _deform(u_far, geometry, config, model, nodes):
    """Deform the path 0 -> u_far, keeping its first leg a ray segment.

    The top node is pushed down along the gradient component orthogonal to
    its ray; a step is accepted only if the maximum over the new ray does not
    exceed the old one, so the path maximum is nonincreasing.
    """
    rho = geometry.mp_radius
    target = u_far.values
    alpha = config.path_step
    log = []
    try:
        beta, top, k = _ray_top(target, target, model, rho, nodes)
    except SeedDegenerateError:
        return target, log, False
    for it in range(config.path_max_iter):
        g = model.residual(beta)
        gn = model.dual_norm(g)
        log.append({"iteration": it, "node": k, "I": top, "gnorm": gn,
                    "step": alpha, "nodes": nodes})
        if gn <= config.path_tol * max(1.0, model.metric_norm(beta)):
            return beta, log, True
        if top < geometry.sphere_bound / 10:
            return beta, log, False
        d = -model.precondition(g)
        Mb = model.preconditioner @ beta
        d -= (float(Mb @ d) / float(Mb @ beta)) * beta
        slope = float(g @ d)
        if not slope < 0:
            return beta, log, False
        alpha = min(config.path_step, 2.0 * alpha)
        for _ in range(config.max_backtracks):
            cand = beta + alpha * d
            if model.energy(cand) <= top + config.armijo_c * alpha * slope:
                try:
                    nb, nt, nk = _ray_top(cand, target, model, rho, nodes)
                except SeedDegenerateError:
                    nt = math.inf
                if nt <= top:
                    break
            alpha *= config.backtrack
        else:
            return beta, log, False
        beta, top, k = nb, nt, nk
    return beta, log, False


def mountain_pass(u_far, geometry, config, model):
    """Discrete path deformation from 0 to ``u_far``, then Newton on the top node."""
    if not model.energy(u_far.values) < 0:
        raise MountainPassError("far endpoint must have negative energy")
    nodes = config.path_nodes
    full_log = []
    for attempt in range(config.max_restarts + 1):
        beta, log, converged = _deform(u_far, geometry, config, model, nodes)
        for row in log:
            row["attempt"] = attempt
        full_log.extend(log)
        if converged or model.energy(beta) >= geometry.sphere_bound / 10:
            break
        nodes *= 2
    else:
        raise MountainPassError(f"path collapsed after {config.max_restarts} restarts")
    u = beta
    if config.polish:
        u, merit, plog = _newton_polish(model, beta, config.polish, config.gtol)
        base = len(full_log)
        for row in plog:
            row["iteration"] += base
            row["polish"] = True
        full_log.extend(plog)
    u0 = Field(model.grid, u)
    if not model.energy(u) > 0:
        raise MountainPassError(f"mountain-pass point has I = {model.energy(u):.6g} <= 0")
    return u0, full_log


def positivity_certificate(u, model, tol=1e-10):
    """Minimum nodal value and the integral of v * u_-**q."""
    neg = np.maximum(-u.values, 0.0)
    integral = model.node_volume * float(np.sum(model.v_nodes * neg ** model.params.q))
    return PositivityCertificate(float(np.min(u.values)), integral, tol)


def hat_norms(model):
    """E-norm of every interior nodal hat function, computed in one sweep."""
    p = model.params.p
    grid = model.grid
    size = int(np.prod(grid.shape))
    inv_h2 = 1.0 / model.h ** 2
    W = model.axis_weight * inv_h2[:, None]  # (N, cells)
    acc = np.zeros(size)
    for ci, bits in enumerate(itertools.product((0, 1), repeat=grid.N)):
        corner = np.where(bits[0] == 0, model.lo[ci, 0], model.hi[ci, 0])
        acc += np.bincount(corner, weights=model.cell_weight * np.sum(W, axis=0) ** (p / 2),
                           minlength=size)
        for k in range(grid.N):
            other = model.hi[ci, k] if bits[k] == 0 else model.lo[ci, k]
            acc += np.bincount(other, weights=model.cell_weight * W[k] ** (p / 2),
                               minlength=size)
    return acc[grid.interior_index] ** (1.0 / p)


def default_test_set(model, count=50, seed=0):
    rng = np.random.default_rng(seed)
    return [Field(model.grid, rng.uniform(-1.0, 1.0, model.grid.n_interior))
            for _ in range(count)]


def weakform_check(u, model, test_set=None, include_hats=True, seed=0):
    """max |<I'(u), phi>| / ||phi||_E over random fields and nodal hats."""
    g = model.residual(u.values)
    if test_set is None:
        test_set = default_test_set(model, seed=seed)
    best = 0.0
    for phi in test_set:
        norm = model.e_norm(phi.values)
        if norm == 0:
            raise ValueError("test fields must be nonzero")
        best = max(best, abs(float(g @ phi.values)) / norm)
    if include_hats:
        best = max(best, float(np.max(np.abs(g) / hat_norms(model))))
    return best


LOG_COLUMNS = ("iteration", "I", "gnorm", "step")


def write_log(path, log):
    """Iteration log as CSV; extra keys (node, attempt, polish) follow the core columns."""
    extra = sorted({k for row in log for k in row} - set(LOG_COLUMNS))
    cols = list(LOG_COLUMNS) + extra
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n", restval="")
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def solve(grid, omega, v, params, config=None, C0=1.0, R=None, x0=None,
          geometry=None, residual_tol=1e-6, resolution=256):
    """Run both branches and record each solution contract as a check."""
    config = config or SolverConfig()
    model = EnergyModel(grid, omega, v, params)
    if geometry is None:
        geometry = geometry_constants(grid, omega, v, params, R, x0, C0, resolution)
    rho = geometry.mp_radius
    seed = seed_field(model, rho)
    result = SolveResult(None, None, geometry=geometry)
    try:
        u1, log1 = find_local_min(seed, geometry, config, model)
        result.u1 = u1
        result.min_log = log1
    except SolverError as exc:
        result.errors["u1"] = f"{type(exc).__name__}: {exc}"
        result.min_log = getattr(exc, "log", [])
    try:
        u_far = find_far_point(seed, config, model, rho)
        u0, logp = mountain_pass(u_far, geometry, config, model)
        result.u0 = u0
        result.path_log = logp
    except SolverError as exc:
        result.errors["u0"] = f"{type(exc).__name__}: {exc}"
    tests = default_test_set(model, seed=config.seed)
    if result.u1 is not None:
        result.energy1 = model.breakdown(result.u1.values)
        result.residual1 = weakform_check(result.u1, model, tests)
        result.positivity1 = positivity_certificate(result.u1, model)
        result.norm1 = model.e_norm(result.u1.values)
        # the natural scale of I'(u) is ||u||**(p-1); u1 can be tiny when p - gamma is small
        if result.norm1 > 0:
            result.notes["residual1_relative"] = result.residual1 / result.norm1 ** (params.p - 1)
    if result.u0 is not None:
        result.energy0 = model.breakdown(result.u0.values)
        result.residual0 = weakform_check(result.u0, model, tests)
        result.positivity0 = positivity_certificate(result.u0, model)
        result.norm0 = model.e_norm(result.u0.values)
    checks = {}
    if result.u1 is not None:
        checks["I(u1) < 0"] = result.energy1.I < 0
        checks["||u1|| <= rho"] = result.norm1 <= rho * (1 + 1e-12)
        checks["residual(u1)"] = result.residual1 <= residual_tol
        checks["positive(u1)"] = result.positivity1.passed
    else:
        checks["u1 found"] = False
    if result.u0 is not None:
        checks["I(u0) > 0"] = result.energy0.I > 0
        checks["residual(u0)"] = result.residual0 <= residual_tol
        checks["positive(u0)"] = result.positivity0.passed
        # soft: reported, not required (C0 is a choice)
        result.notes["sphere_bound_soft"] = bool(
            result.energy0.I >= geometry.sphere_bound * (1 - config.sphere_slack))
    else:
        checks["u0 found"] = False
    if result.u0 is not None and result.u1 is not None:
        result.distinctness = model.e_norm(result.u0.values - result.u1.values)
        checks["distinct"] = result.distinctness > config.distinct_rel * max(
            result.norm0, result.norm1)
    result.checks = checks
    return result
