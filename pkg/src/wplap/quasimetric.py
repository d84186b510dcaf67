"""Quasi-metric on R^(n+m) induced by the weight omega.

With sigma = omega**(1 - p') and Q(x, t) the ball in R^n,

    h_x(t) = t * (avg over Q(x, t) of sigma)**(1/p'),
    rho(z1, z2) = max(|x1 - x2|, h_x1^-1(|y1 - y2|), h_x2^-1(|y1 - y2|)).

Inverses come from a 256-knot log-spaced table per x followed by bisection
on the exact h.  For n = 1 and closed-form weights everything is vectorized
over points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, MetricViolationError, ParameterError, UnreachableValueError
from .weights import Weight, ball_measure, weight_integral

__all__ = [
    "QuasiMetricSpace",
    "QuasiMetricReport",
    "h",
    "h_inv",
    "rho",
    "quasi_triangle_constant",
]

KNOTS = 256
CAP_FACTOR = 1e6
BISECT_MAX = 200
_CACHE_LIMIT = 4096


@dataclass(eq=False)
class QuasiMetricSpace:
    omega: Weight
    p: float
    n: int
    m: int
    tol: float = 1e-13
    diameter: float = 1.0
    resolution: int = 64
    _tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.omega.n != self.n:
            raise ParameterError(f"omega lives on R^{self.omega.n}, expected R^{self.n}")
        if not self.p > 1:
            raise ParameterError("p must exceed 1")
        if not (self.tol > 0 and self.diameter > 0):
            raise ParameterError("tolerance and diameter must be positive")
        self.p_conj = self.p / (self.p - 1)
        self.sigma = self.omega.pow(1.0 - self.p_conj)
        self.cap = CAP_FACTOR * self.diameter
        self.knots = np.geomspace(1e-9 * self.diameter, self.cap, KNOTS)
        self._vectorized = self.n == 1 and self.sigma.exact
        self._flat = None
        if self.sigma.is_constant:
            # sigma constant: h_x(t) = t * c**(1/p')
            self._flat = float(self.sigma(np.zeros((1, self.n)))[0]) ** (1.0 / self.p_conj)

    # -- h ------------------------------------------------------------
    def _h_scalar(self, x, t):
        if t == 0:
            return 0.0
        if self._flat is not None:
            return t * self._flat
        total = weight_integral(self.sigma, x, t, self.resolution)
        if not math.isfinite(total):
            raise DivergenceError(f"sigma is not integrable on Q({list(x)}, {t})")
        avg = total / ball_measure(self.n, x, t, self.resolution)
        return t * avg ** (1.0 / self.p_conj)

    def _h_many(self, x, t):
        """Elementwise h for n = 1: x, t arrays of equal shape."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if self._flat is not None:
            return t * self._flat
        safe = np.where(t > 0, t, 1.0)
        total = np.asarray(self.sigma.interval_integral(x - safe, x + safe), dtype=float)
        if not np.all(np.isfinite(total[t > 0])):
            raise DivergenceError("sigma is not integrable on some probed interval")
        out = safe * (total / (2 * safe)) ** (1.0 / self.p_conj)
        return np.where(t > 0, out, 0.0)

    def _check_table(self, H, where):
        bad = np.diff(H, axis=-1) < -1e-12 * np.abs(H[..., 1:])
        if np.any(bad):
            raise ParameterError(f"h_x is not nondecreasing at x = {where}")

    def table(self, x):
        """Cached knot values h_x(knots) for a single point x."""
        key = tuple(np.atleast_1d(np.asarray(x, dtype=float)).tolist())
        tab = self._tables.get(key)
        if tab is None:
            xa = np.array(key)
            if self._vectorized:
                tab = self._h_many(np.full(KNOTS, xa[0]), self.knots)
            else:
                tab = np.array([self._h_scalar(xa, t) for t in self.knots])
            self._check_table(tab, key)
            if len(self._tables) < _CACHE_LIMIT:
                self._tables[key] = tab
        return tab

    # -- inverse --------------------------------------------------------
    def _invert_vectorized(self, x, w):
        x = np.asarray(x, dtype=float).reshape(-1)
        w = np.asarray(w, dtype=float).reshape(-1)
        out = np.zeros_like(w)
        live = w > 0
        if not np.any(live):
            return out
        xs, ws = x[live], w[live]
        H = self._h_many(xs[:, None], np.broadcast_to(self.knots, (xs.size, KNOTS)))
        self._check_table(H, "one of the probed points")
        reach = H >= ws[:, None]
        if not np.all(reach[:, -1]):
            i = int(np.argmin(reach[:, -1]))
            raise UnreachableValueError(
                f"h_x({xs[i]}) stays below {ws[i]} up to t = {self.cap:g}")
        j = np.argmax(reach, axis=1)
        hi = self.knots[j]
        lo = np.where(j > 0, self.knots[np.maximum(j - 1, 0)], 0.0)
        for _ in range(BISECT_MAX):
            if np.all(hi - lo <= self.tol * hi):
                break
            mid = 0.5 * (lo + hi)
            up = self._h_many(xs, mid) >= ws
            hi = np.where(up, mid, hi)
            lo = np.where(up, lo, mid)
        out[live] = hi
        return out

    def _invert_scalar(self, x, w):
        if w == 0:
            return 0.0
        tab = self.table(x)
        j = int(np.searchsorted(tab, w, side="left"))
        if j >= KNOTS:
            raise UnreachableValueError(f"h_x({list(x)}) stays below {w} up to t = {self.cap:g}")
        hi = float(self.knots[j])
        lo = float(self.knots[j - 1]) if j > 0 else 0.0
        for _ in range(BISECT_MAX):
            if hi - lo <= self.tol * hi:
                break
            mid = 0.5 * (lo + hi)
            if self._h_scalar(x, mid) >= w:
                hi = mid
            else:
                lo = mid
        return hi


def _point(space, x):
    return np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)[:space.n]


def _x_like(x, shape):
    """n = 1: a scalar x, or one x per entry of an array of matching shape."""
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(x if x.size > 1 else x.reshape(()), shape)


def _out(a):
    return float(a) if np.ndim(a) == 0 else a


def h(space, x, t):
    """h_x(t), vectorized over ``t`` (and over ``x`` when n = 1)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ParameterError("t must be nonnegative")
    if space._flat is not None:
        return _out(t * space._flat)
    if space._vectorized:
        return _out(space._h_many(_x_like(x, t.shape), t))
    xa = _point(space, x)
    vals = [space._h_scalar(xa, float(s)) for s in t.reshape(-1)]
    return _out(np.array(vals).reshape(t.shape))


def h_inv(space, x, w):
    """inf {t > 0 : h_x(t) >= w}, vectorized like :func:`h`."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ParameterError("w must be nonnegative")
    if space._flat is not None:
        return _out(w / space._flat)
    if space._vectorized:
        return _out(space._invert_vectorized(_x_like(x, w.shape), w).reshape(w.shape))
    xa = _point(space, x)
    vals = [space._invert_scalar(xa, float(s)) for s in w.reshape(-1)]
    return _out(np.array(vals).reshape(w.shape))


def _split(space, z):
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != space.n + space.m:
        raise ParameterError(f"points need {space.n + space.m} coordinates")
    return z[:, :space.n], z[:, space.n:], single


def _inv_rows(space, x, w):
    if space._flat is not None:
        return w / space._flat
    if space._vectorized:
        return space._invert_vectorized(x[:, 0], w)
    return np.array([space._invert_scalar(xi, float(wi)) for xi, wi in zip(x, w)])


def _row_norm(d):
    # scaled so that tiny differences do not underflow to zero
    s = np.max(np.abs(d), axis=1)
    safe = np.where(s > 0, s, 1.0)
    return s * np.sqrt(np.sum((d / safe[:, None]) ** 2, axis=1))


def rho(space, z1, z2):
    """Quasi-distance between points (rows) z1 and z2."""
    x1, y1, single = _split(space, z1)
    x2, y2, _ = _split(space, z2)
    dx = _row_norm(x1 - x2)
    dy = _row_norm(y1 - y2)
    out = np.maximum(dx, np.maximum(_inv_rows(space, x1, dy), _inv_rows(space, x2, dy)))
    return float(out[0]) if single else out


@dataclass
class QuasiMetricReport:
    K0_estimate: float
    samples: int
    worst: dict
    skipped: int = 0

    @property
    def enlargement(self):
        """5 K0**2, the ball enlargement of the general Poincare machinery (unused)."""
        return 5.0 * self.K0_estimate ** 2

    def to_json(self):
        return {"K0_estimate": self.K0_estimate, "samples": self.samples,
                "worst": self.worst, "skipped": self.skipped,
                "enlargement": self.enlargement}


def quasi_triangle_constant(space, samples, box, seed=0):
    """Max of rho(z1,z2) / (rho(z1,z3) + rho(z2,z3)) over random triples in ``box``.

    Triples come from a Philox stream drawn in order, so the first k triples
    do not depend on ``samples`` and the estimate is nondecreasing in it.
    Triple 0 is replaced by (z1, z2, z1), whose ratio is exactly 1.
    """
    if samples < 100:
        raise ParameterError("need at least 100 triples")
    N = space.n + space.m
    box = np.asarray(box, dtype=float).reshape(N, 2)
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random((samples, 3, N))
    pts = box[:, 0] + u * (box[:, 1] - box[:, 0])
    pts[0, 2] = pts[0, 0]
    z1, z2, z3 = pts[:, 0], pts[:, 1], pts[:, 2]
    num = rho(space, z1, z2)
    den = rho(space, z1, z3) + rho(space, z2, z3)
    zero = den == 0
    if np.any(zero & (num > 0)):
        i = int(np.argmax(zero & (num > 0)))
        raise MetricViolationError(f"rho(z1,z3) + rho(z2,z3) = 0 but rho(z1,z2) = {num[i]} "
                                   f"at triple {i}")
    keep = ~zero
    ratio = np.full(samples, -np.inf)
    ratio[keep] = num[keep] / den[keep]
    i = int(np.argmax(ratio))
    worst = {"z1": pts[i, 0].tolist(), "z2": pts[i, 1].tolist(), "z3": pts[i, 2].tolist(),
             "ratio": float(ratio[i]), "index": i}
    return QuasiMetricReport(float(ratio[i]), samples, worst, int(zero.sum()))
