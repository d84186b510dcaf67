"""Empirical checks of the embedding inequality, the fibering sign structure,
the sphere lower bound, and estimator-versus-oracle agreement."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .functional import EnergyModel, ProblemParams, embedding_constant, mp_radius, sphere_bound
from .grid import Field, build_grid
from .quasimetric import QuasiMetricSpace, h, h_inv, quasi_triangle_constant
from .weights import Weight, ap_constant, balance_constant, dyadic_family, refine_family

__all__ = [
    "InequalityReport",
    "FiberingProfile",
    "GradientCheck",
    "OracleRow",
    "random_fields",
    "shape_fields",
    "poincare_check",
    "fibering_scan",
    "sphere_bound_check",
    "gradient_order_check",
    "brute_force_ap_1d",
    "oracle_suite",
]


@dataclass
class InequalityReport:
    inequality: str
    samples: int
    max_ratio: float
    argmax: int
    violating: dict | None = None
    trend: list = field(default_factory=list)
    stable: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return {"inequality": self.inequality, "samples": self.samples,
                "max_ratio": _num(self.max_ratio), "argmax": self.argmax,
                "violating": self.violating, "trend": self.trend,
                "stable": self.stable, "extra": self.extra}


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# test functions


def random_fields(grid, count, seed=0, coarse=9):
    """Zero-boundary multilinear interpolants of iid uniform(-1, 1) lattice values.

    The lattice has ``coarse`` points per axis spanning the box, so the same
    seed gives the same functions on every grid; when ``counts - 1`` is a
    multiple of ``coarse - 1`` they are represented exactly.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    axes = [np.linspace(a, b, coarse) for a, b in grid.bounds]
    pts = grid.interior_coords()
    out = []
    for _ in range(count):
        vals = np.zeros((coarse,) * grid.N)
        inner = tuple(slice(1, -1) for _ in range(grid.N))
        vals[inner] = rng.uniform(-1.0, 1.0, (coarse - 2,) * grid.N)
        out.append(Field(grid, RegularGridInterpolator(axes, vals)(pts)))
    return out


def shape_fields(grid):
    """Ten deterministic zero-boundary bumps, tents and ramps."""
    lo = np.array([a for a, _ in grid.bounds])
    hi = np.array([b for _, b in grid.bounds])
    s = (grid.interior_coords() - lo) / (hi - lo)
    sin1 = np.prod(np.sin(np.pi * s), axis=1)
    tent = np.prod(np.minimum(s, 1 - s), axis=1)
    poly = np.prod(s * (1 - s), axis=1)

    def radial(c, r):
        d = np.linalg.norm(s - c, axis=1) / r
        return np.maximum(0.0, 1.0 - d)

    shapes = [
        sin1,
        sin1 ** 2,
        tent,
        np.prod(s * (1 - s) ** 3, axis=1),
        poly * s[:, 0],
        np.sin(2 * np.pi * s[:, 0]) * np.prod(np.sin(np.pi * s[:, 1:]), axis=1),
        np.prod(np.sin(3 * np.pi * s), axis=1),
        radial(np.full(grid.N, 0.5), 0.25),
        radial(np.full(grid.N, 0.3), 0.2),
        tent * (s[:, 0] - 0.5),
    ]
    return [Field(grid, v) for v in shapes]


# ---------------------------------------------------------------------------
# embedding inequality


def _lqv_centered(u, v_full, weights, q):
    """|| f - mean_v f ||_{L^q(v)} with trapezoid weights over all nodes."""
    f = u.grid.embed(u.values)
    wv = weights * v_full
    mean = float(np.sum(wv * f) / np.sum(wv))
    return float(np.sum(wv * np.abs(f - mean) ** q)) ** (1.0 / q)


def _embedding_ratios(grid, omega, v, params, A, fields):
    model = EnergyModel(grid, omega, v, params)
    weights = grid.trapezoid_weights()
    v_full = v.evaluate_perturbed(grid.node_coords()[:, :grid.n], grid.spacing[0] / 2)
    ratios = []
    for u in fields:
        lhs = _lqv_centered(u, v_full, weights, params.q)
        rhs = A * model.e_norm(u.values)
        ratios.append(0.0 if lhs == 0 else (math.inf if rhs == 0 else lhs / rhs))
    return np.array(ratios)


def poincare_check(omega, v, params, bounds, counts, R=None, x0=None, samples=100,
                   seed=0, levels=2, coarse=9, resolution=256):
    """Max of ||f - mean_v f||_{L^q(v)} / (A ||grad_w f||_p) over test functions.

    A is the embedding constant at C0 = 1, so the maximum ratio is an
    empirical C0.  The grid is doubled ``levels - 1`` times; the verdict is
    stable when the last doubling changes the maximum by less than 20%.
    """
    N = params.n + params.m
    centre = np.array([(a + b) / 2 for a, b in bounds])
    if R is None:
        R = float(np.linalg.norm([(b - a) / 2 for a, b in bounds]))
    if x0 is None:
        x0 = centre[:params.n]
    A = embedding_constant(R, np.atleast_1d(x0), omega, v, params, 1.0, resolution)
    trend = []
    ratios = None
    for level in range(levels):
        cnt = [(c - 1) * 2 ** level + 1 for c in counts]
        grid = build_grid(params.n, params.m, bounds, cnt)
        fields = random_fields(grid, samples, seed, coarse) + shape_fields(grid)
        ratios = _embedding_ratios(grid, omega, v, params, A, fields)
        trend.append({"counts": cnt, "max_ratio": _num(np.max(ratios))})
    i = int(np.argmax(ratios))
    worst = float(ratios[i])
    stable = None
    if levels > 1:
        a, b = trend[-2]["max_ratio"], trend[-1]["max_ratio"]
        stable = a is not None and b is not None and abs(b / a - 1) < 0.2
    violating = {"index": i, "ratio": worst} if worst > 1 else None
    return InequalityReport("embedding", len(ratios), worst, i, violating, trend, stable,
                            {"A": A, "R": float(R), "dimension": N})


# ---------------------------------------------------------------------------
# fibering


@dataclass
class FiberingProfile:
    t: np.ndarray
    energy: np.ndarray
    polynomial: np.ndarray
    integrals: dict
    max_rel_error: float
    crossing: float | None = None

    def bands(self):
        """Runs of constant sign as (sign, t_first, t_last)."""
        sg = np.sign(self.energy)
        out = []
        start = 0
        for k in range(1, len(sg) + 1):
            if k == len(sg) or sg[k] != sg[start]:
                out.append((int(sg[start]), float(self.t[start]), float(self.t[k - 1])))
                start = k
        return out

    def structure(self):
        """Negative at the smallest t, a positive band containing the sphere
        crossing, negative at the largest t."""
        neg_small = bool(self.energy[0] < 0)
        neg_large = bool(self.energy[-1] < 0)
        band = None
        if self.crossing is not None:
            band = any(s > 0 and a <= self.crossing <= b for s, a, b in self.bands())
        return {"negative_small_t": neg_small, "positive_band_at_crossing": band,
                "negative_large_t": neg_large,
                "three_bands": bool(neg_small and neg_large and band)}

    def to_json(self):
        return {"integrals": self.integrals, "max_rel_error": self.max_rel_error,
                "crossing": self.crossing,
                "bands": [{"sign": s, "t_first": a, "t_last": b} for s, a, b in self.bands()],
                "structure": self.structure()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "I"])
            for t, e in zip(self.t, self.energy):
                w.writerow([repr(float(t)), repr(float(e))])


def fibering_scan(u_bar, model, ts, rho=None):
    """I(t u_bar) on ``ts`` next to its closed form

        t**p a / p - t**q b / q - mu t**gamma c / gamma,

    a = int |grad_w u|**p, b = int v u_+**q, c = int u_+**gamma.  The error is
    relative to the sum of the magnitudes of the three terms.
    """
    P = model.params
    ts = np.asarray(ts, dtype=float)
    u = u_bar.values
    a = model.gradient_integral(u)
    b = model.integral_v_pos_q(u)
    c = model.integral_pos_gamma(u)
    T1 = ts ** P.p * a / P.p
    T2 = ts ** P.q * b / P.q
    T3 = P.mu * ts ** P.gamma * c / P.gamma
    poly = T1 - T2 - T3
    scan = np.array([model.energy(t * u) for t in ts])
    scale = T1 + T2 + T3
    err = np.abs(scan - poly) / np.where(scale > 0, scale, 1.0)
    crossing = None if rho is None else rho / model.e_norm(u)
    return FiberingProfile(ts, scan, poly, {"a": a, "b": b, "c": c}, float(np.max(err)),
                           crossing)


# ---------------------------------------------------------------------------
# sphere bound


def sphere_bound_check(model, geometry, samples=100, seed=0, C0=None):
    """min I over random fields on the sphere ||u||_E = rho versus (1/2p) rho**p.

    ``C0`` (e.g. the empirical value from :func:`poincare_check`) rescales the
    embedding constant and hence rho and the bound.  Since I is affine in mu,
    ``extra["lambda_empirical"]`` is the largest mu keeping every sampled I
    on the sphere positive: min over samples of (I1 - I2) / (I3 / mu).
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    P = model.params
    A = geometry.embedding_A
    if C0 is not None:
        A = A * C0 / geometry.C0
    rho = mp_radius(A, P.p, P.q)
    bound = sphere_bound(A, P.p, P.q)
    fields = random_fields(model.grid, samples, seed)
    energies, lam = [], np.inf
    norm_err = 0.0
    for f in fields:
        u = f.values * (rho / model.e_norm(f.values))
        norm_err = max(norm_err, abs(model.e_norm(u) - rho) / rho)
        I1, I2, I3 = model.parts(u)
        energies.append(I1 - I2 - I3)
        # mu-free concave term; zero when u has no positive part
        c = model.node_volume * float(np.sum(np.maximum(u, 0.0) ** P.gamma)) / P.gamma
        if c > 0:
            lam = min(lam, max(I1 - I2, 0.0) / c)
    energies = np.array(energies)
    with np.errstate(divide="ignore"):
        ratios = np.where(energies > 0, bound / energies, np.inf)
    i = int(np.argmin(energies))
    worst = float(ratios[i])
    violating = {"index": i, "I": float(energies[i]), "bound": bound} if worst > 1 else None
    return InequalityReport("sphere_bound", samples, worst, i, violating,
                            extra={"min_I": float(energies[i]), "bound": bound, "rho": rho,
                                   "A": A, "norm_rel_error": norm_err,
                                   "lambda_empirical": float(lam)})


# ---------------------------------------------------------------------------
# oracles


@dataclass
class GradientCheck:
    slopes: list
    rel_errors: list  # per pair, per step
    steps: tuple

    @property
    def min_slope(self):
        return float(min(self.slopes))

    @property
    def max_final_error(self):
        return float(max(e[-1] for e in self.rel_errors))

    def passed(self, slope=1.9, tol=1e-6):
        return self.min_slope >= slope and self.max_final_error <= tol

    def to_json(self):
        return {"min_slope": self.min_slope, "max_final_error": self.max_final_error,
                "steps": list(self.steps), "pairs": len(self.slopes)}


def _smooth_sample(grid, rng):
    """0.5 + random increasing ramp + nodal noise too small to flip any edge.

    The p-term is only C**2 where the gradient is nonzero and the u_+ terms
    only away from u = 0; this sample keeps both away from their kinks so a
    second-order difference quotient is in its asymptotic range.
    """
    lo = np.array([a for a, _ in grid.bounds])
    L = np.array([b - a for a, b in grid.bounds])
    s = (grid.interior_coords() - lo) / L
    slope = rng.uniform(4.0, 8.0, grid.N)
    amp = 0.8 * float(np.min(grid.spacing / L))
    return 0.5 + s @ slope + rng.uniform(-amp, amp, grid.n_interior)


def gradient_order_check(model, pairs=20, seed=0, steps=(1e-2, 1e-3, 1e-4)):
    """Central differences of I against <residual(u), phi> on random pairs.

    phi is a coarse-lattice random field, so the difference quotient is not
    dominated by grid-scale oscillation of the direction.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    phis = random_fields(model.grid, pairs, seed=seed + 1, coarse=9)
    slopes, errs = [], []
    for f in phis:
        u = _smooth_sample(model.grid, rng)
        phi = f.values
        exact = float(model.residual(u) @ phi)
        e = []
        ul, pl = u.astype(np.longdouble), phi.astype(np.longdouble)
        for hh in steps:
            hl = np.longdouble(hh)
            fd = (model.energy_extended(ul + hl * pl)
                  - model.energy_extended(ul - hl * pl)) / (2 * hl)
            e.append(float(abs(fd - exact) / abs(exact)))
        slopes.append(float(np.polyfit(np.log(steps), np.log(e), 1)[0]))
        errs.append(e)
    return GradientCheck(slopes, errs, tuple(steps))


def brute_force_ap_1d(w, p, lo=-1.0, hi=1.0, points=201):
    """A_p ratio maximized over every interval with endpoints on a uniform grid.

    Returns ``(value, diverged)``; divergence means some interval integral
    of w or sigma is infinite.
    """
    x = np.linspace(lo, hi, points)
    a, b = np.meshgrid(x, x, indexing="ij")
    keep = b > a
    a, b = a[keep], b[keep]
    sigma = w.pow(1.0 - p / (p - 1.0))
    wi = np.asarray(w.interval_integral(a, b), dtype=float)
    si = np.asarray(sigma.interval_integral(a, b), dtype=float)
    if not (np.all(np.isfinite(wi)) and np.all(np.isfinite(si))):
        return math.inf, True
    ratio = wi * si ** (p - 1.0) / (b - a) ** p
    return float(np.max(ratio)), False


@dataclass
class OracleRow:
    name: str
    passed: bool
    details: dict

    def to_json(self):
        return {"name": self.name, "passed": bool(self.passed), "details": self.details}


def _ap_row(alphas=(-0.5, 0.0, 0.3, 0.5, 0.9), divergent=(-1.0, 1.5), p=2.0):
    fam = dyadic_family([0.0], 1.0)
    rows, ok = [], True
    for a in alphas:
        w = Weight.power(a)
        est = ap_constant(w, p, fam)
        ref, div = brute_force_ap_1d(w, p)
        rel = abs(est.value / ref - 1)
        good = not est.diverged and not div and rel < 0.05
        ok &= good
        rows.append({"alpha": a, "family": est.value, "oracle": ref, "rel": rel})
    for a in divergent:
        w = Weight.power(a)
        est = ap_constant(w, p, fam)
        _, div = brute_force_ap_1d(w, p)
        ok &= bool(est.diverged and div)
        rows.append({"alpha": a, "family_diverged": bool(est.diverged), "oracle_diverged": div})
    return OracleRow("ap_interval_scan", ok, {"rows": rows})


def _balance_row():
    omega, v = Weight.power(0.3), Weight.power(0.2)
    fam = dyadic_family([0.0], 1.0)
    b1 = balance_constant(v, omega, 1.5, 3.0, 1, 1, fam)
    b2 = balance_constant(v, omega, 1.5, 3.0, 1, 1, refine_family(fam))
    rel = abs(b2.value / b1.value - 1)
    ok = not (b1.diverged or b2.diverged) and rel < 0.1
    return OracleRow("balance_refinement", ok, {"coarse": b1.value, "fine": b2.value, "rel": rel})


def _h_row(alpha=0.5):
    space = QuasiMetricSpace(Weight.power(alpha), 2.0, 1, 1, diameter=2 * math.sqrt(2))
    t = np.geomspace(1e-3, 1.0, 50)
    closed = (1 - alpha) ** -0.5 * t ** (1 - alpha / 2)
    err_h = float(np.max(np.abs(h(space, 0.0, t) - closed) / closed))
    w = np.geomspace(1e-3, 1.0, 50)
    closed_inv = ((1 - alpha) ** 0.5 * w) ** (1 / (1 - alpha / 2))
    err_inv = float(np.max(np.abs(h_inv(space, 0.0, w) - closed_inv) / closed_inv))
    return OracleRow("h_closed_form", err_h < 1e-5 and err_inv < 1e-5,
                     {"h_rel_error": err_h, "h_inv_rel_error": err_inv})


def _k0_row(samples=10_000):
    space = QuasiMetricSpace(Weight.power(0.5), 2.0, 1, 1, diameter=2 * math.sqrt(2))
    box = [(-1, 1), (-1, 1)]
    k1 = quasi_triangle_constant(space, samples, box, seed=0).K0_estimate
    k2 = quasi_triangle_constant(space, samples, box, seed=1).K0_estimate
    rel = abs(k2 / k1 - 1)
    return OracleRow("k0_two_seed", math.isfinite(k1) and rel < 0.1,
                     {"seed0": k1, "seed1": k2, "rel": rel})


def _gradient_row():
    grid = build_grid(1, 1, [(0, 1), (0, 1)], [17, 17])
    unit = Weight.constant(1.0)
    model = EnergyModel(grid, unit, unit, ProblemParams(1.5, 3.0, 1.3, 0.05, 1, 1))
    chk = gradient_order_check(model)
    return OracleRow("gradient_order", chk.passed(), chk.to_json())


def oracle_suite():
    """Every brute-force comparison, one row each."""
    return [_ap_row(), _balance_row(), _h_row(), _k0_row(), _gradient_row()]
