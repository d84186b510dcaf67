"""Positive weights on R^n and Muckenhoupt-type constants over ball families.

Every supremum the theory asks for is approximated by a maximum over a
finite :class:`BallFamily`.  Integrals over balls use exact antiderivatives
whenever the weight has one per coordinate (constant, power on R^1, product
of coordinate powers); otherwise the midpoint rule on a tensor grid over the
bounding box, keeping only cells whose centres fall inside the ball.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidWeightError, ParameterError

__all__ = [
    "Weight",
    "parse_weight",
    "BallFamily",
    "dyadic_family",
    "refine_family",
    "weight_integral",
    "ball_measure",
    "ball_cells",
    "Estimate",
    "AinfFit",
    "CompactnessProfile",
    "ExponentVerdict",
    "WeightReport",
    "ap_constant",
    "a1_constant",
    "ainf_params",
    "doubling_constant",
    "balance_exponents",
    "balance_constant",
    "compactness_profile",
    "validate_exponents",
    "weight_report",
]

KINDS = ("constant", "power", "product", "tabulated")


def _power_interval(a, b, alpha):
    """Exact integral of |s|**alpha over [a, b] (a <= b), vectorized.

    Returns ``inf`` for non-integrable singularities at the origin.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    if alpha == 0.0:
        return b - a

    def from_zero(c):
        # integral over [0, c], c >= 0
        if alpha > -1.0:
            return c ** (alpha + 1.0) / (alpha + 1.0)
        return np.where(c > 0, np.inf, 0.0)

    def same_side(lo, hi):
        # integral over [lo, hi] with 0 <= lo <= hi
        with np.errstate(divide="ignore", invalid="ignore"):
            if alpha == -1.0:
                val = np.log(hi) - np.log(lo)
            else:
                val = (hi ** (alpha + 1.0) - lo ** (alpha + 1.0)) / (alpha + 1.0)
        val = np.where(hi == lo, 0.0, val)
        if alpha <= -1.0:
            val = np.where((lo == 0) & (hi > 0), np.inf, val)
        return val

    out = np.empty(a.shape)
    pos = a >= 0
    neg = b <= 0
    mid = ~(pos | neg)
    out[pos] = same_side(a[pos], b[pos])
    out[neg] = same_side(-b[neg], -a[neg])
    out[mid] = from_zero(-a[mid]) + from_zero(b[mid])
    return out


@dataclass(frozen=True, eq=False)
class Weight:
    """A positive weight w(x) = scale * base(x) on R^n.

    ``kind`` is one of ``constant``, ``power`` (|x|**exponents[0]), ``product``
    (prod_i |x_i|**exponents[i]) or ``tabulated`` (piecewise constant on the
    cells delimited by ``edges``).
    """

    kind: str
    n: int = 1
    scale: float = 1.0
    exponents: tuple = ()
    edges: tuple = ()
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown weight kind {self.kind!r}")
        if self.n < 1:
            raise ParameterError("weight dimension must be >= 1")
        if not self.scale > 0:
            raise InvalidWeightError("weight scale must be positive")
        if self.kind == "product" and len(self.exponents) != self.n:
            raise ParameterError("product weight needs one exponent per coordinate")

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c=1.0, n=1):
        return cls("constant", n=n, scale=float(c))

    @classmethod
    def power(cls, alpha, n=1, scale=1.0):
        return cls("power", n=n, scale=float(scale), exponents=(float(alpha),))

    @classmethod
    def product(cls, alphas, scale=1.0):
        alphas = tuple(float(a) for a in alphas)
        return cls("product", n=len(alphas), scale=float(scale), exponents=alphas)

    @classmethod
    def tabulated(cls, edges, values):
        edges = tuple(np.asarray(e, dtype=float) for e in edges)
        values = np.asarray(values, dtype=float)
        if values.shape != tuple(len(e) - 1 for e in edges):
            raise ParameterError("tabulated values must have one entry per cell")
        return cls("tabulated", n=len(edges), edges=edges, values=values)

    # -- algebra ------------------------------------------------------------
    def pow(self, s):
        """Return the weight w**s (used for sigma = w**(1 - p'))."""
        s = float(s)
        if self.kind == "tabulated":
            with np.errstate(divide="ignore"):
                vals = self.values ** s
            return Weight("tabulated", n=self.n, scale=self.scale ** s,
                          edges=self.edges, values=vals)
        return Weight(self.kind, n=self.n, scale=self.scale ** s,
                      exponents=tuple(a * s for a in self.exponents))

    def scaled(self, lam):
        return Weight(self.kind, n=self.n, scale=self.scale * float(lam),
                      exponents=self.exponents, edges=self.edges, values=self.values)

    @property
    def is_constant(self):
        return self.kind == "constant" or (
            self.kind in ("power", "product") and all(a == 0.0 for a in self.exponents))

    @property
    def exact(self):
        """True when ball integrals use exact per-cell antiderivatives."""
        return self.kind in ("constant", "product") or (self.kind == "power" and self.n == 1)

    def describe(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.scale, "n": self.n}
        if self.kind == "tabulated":
            return {"kind": "tabulated", "n": self.n, "scale": self.scale,
                    "cells": list(self.values.shape)}
        return {"kind": self.kind, "n": self.n, "scale": self.scale,
                "exponents": list(self.exponents)}

    # -- evaluation ---------------------------------------------------------
    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.n:
            raise ParameterError(f"expected points in R^{self.n}, got shape {x.shape}")
        return x

    def __call__(self, x):
        x = self._points(x)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.scale)
        with np.errstate(divide="ignore"):
            if self.kind == "power":
                return self.scale * np.linalg.norm(x, axis=-1) ** self.exponents[0]
            if self.kind == "product":
                out = np.full(x.shape[:-1], self.scale)
                for i, a in enumerate(self.exponents):
                    out = out * np.abs(x[..., i]) ** a
                return out
        idx = tuple(
            np.clip(np.searchsorted(e, x[..., k], side="right") - 1, 0, len(e) - 2)
            for k, e in enumerate(self.edges))
        return self.scale * self.values[idx]

    def singular_at(self, x):
        """Mask of points where a power-type base is singular or zero."""
        x = self._points(x)
        if self.kind == "power" and self.exponents[0] != 0.0:
            return np.all(x == 0.0, axis=-1)
        if self.kind == "product":
            mask = np.zeros(x.shape[:-1], dtype=bool)
            for i, a in enumerate(self.exponents):
                if a != 0.0:
                    mask |= x[..., i] == 0.0
            return mask
        return np.zeros(x.shape[:-1], dtype=bool)

    def evaluate_perturbed(self, x, shift):
        """Evaluate, moving singular points by ``shift`` along the first axis."""
        x = np.array(self._points(x), dtype=float)
        bad = self.singular_at(x)
        if np.any(bad):
            x[bad, 0] += shift
        vals = self(x)
        if self.kind == "tabulated" and np.any(vals <= 0):
            raise InvalidWeightError("tabulated weight has a non-positive entry")
        return vals

    # -- integration ----------------------------------------------------------
    def interval_integral(self, a, b):
        """Integral over [a, b] on R^1, vectorized."""
        if self.n != 1:
            raise ParameterError("interval_integral needs a weight on R^1")
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "constant":
            return self.scale * (b - a)
        if self.kind in ("power", "product"):
            return self.scale * _power_interval(a, b, self.exponents[0])
        raise ParameterError("tabulated weights integrate through cells")

    def cell_integrals(self, edges):
        """Integrals over the tensor cells delimited by per-axis ``edges``."""
        edges = [np.asarray(e, dtype=float) for e in edges]
        if len(edges) != self.n:
            raise ParameterError("need one edge array per coordinate")
        widths = [np.diff(e) for e in edges]
        if self.kind == "constant":
            vol = _outer(widths)
            return self.scale * vol
        if self.kind == "product" or (self.kind == "power" and self.n == 1):
            factors = [_power_interval(e[:-1], e[1:], a)
                       for e, a in zip(edges, self.exponents)]
            return self.scale * _outer(factors)
        mids = np.stack(np.meshgrid(*[(e[:-1] + e[1:]) / 2 for e in edges],
                                    indexing="ij"), axis=-1)
        vals = self.evaluate_perturbed(mids, widths[0].min() / 2)
        return vals * _outer(widths)


def _outer(factors):
    out = factors[0]
    for f in factors[1:]:
        out = np.multiply.outer(out, f)
    return out


def parse_weight(spec, n):
    """Parse ``constant:c``, ``power:alpha``, ``product:a1,a2`` or ``tabulated:path``.

    A trailing ``*scale`` multiplies the weight, e.g. ``power:0.3*2``.
    """
    text = spec.strip()
    scale = 1.0
    if "*" in text and not text.startswith("tabulated"):
        text, s = text.rsplit("*", 1)
        scale = float(s)
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "constant":
        return Weight.constant(float(arg or 1.0) * scale, n=n)
    if kind == "power":
        return Weight.power(float(arg), n=n, scale=scale)
    if kind == "product":
        alphas = [float(a) for a in arg.split(",")]
        if len(alphas) != n:
            raise ParameterError(f"product weight needs {n} exponents")
        return Weight.product(alphas, scale=scale)
    if kind == "tabulated":
        return _load_tabulated(arg.strip(), n)
    raise ParameterError(f"unknown weight kind {kind!r}")


def _load_tabulated(path, n):
    # rows: x_1 .. x_n (cell centres on a tensor lattice), value
    data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if data.shape[1] != n + 1:
        raise ParameterError(f"tabulated weight file needs {n + 1} columns")
    axes = [np.unique(data[:, k]) for k in range(n)]
    edges = []
    for ax in axes:
        if len(ax) < 2:
            raise ParameterError("tabulated weight needs >= 2 cells per axis")
        mid = (ax[:-1] + ax[1:]) / 2
        edges.append(np.concatenate([[2 * ax[0] - mid[0]], mid, [2 * ax[-1] - mid[-1]]]))
    values = np.empty([len(a) for a in axes])
    idx = tuple(np.searchsorted(ax, data[:, k]) for k, ax in enumerate(axes))
    values[idx] = data[:, n]
    return Weight.tabulated(edges, values)


# ---------------------------------------------------------------------------
# ball families and quadrature


@dataclass(frozen=True, eq=False)
class BallFamily:
    """Finite system of balls Q(c, r): every centre crossed with every radius."""

    centers: np.ndarray
    radii: np.ndarray
    R: float
    x0: np.ndarray
    centers_per_axis: int | None = None
    theta: float | None = None

    def __post_init__(self):
        if len(self.centers) == 0 or len(self.radii) == 0:
            raise ParameterError("ball family must be nonempty")
        if np.any(np.diff(self.radii) <= 0):
            raise ParameterError("radius ladder must be strictly increasing")
        dist = np.linalg.norm(self.centers - self.x0, axis=1)
        if np.any(dist > self.R * (1 + 1e-12)):
            raise ParameterError("all centres must lie within R of x0")

    @property
    def n(self):
        return self.centers.shape[1]

    def __len__(self):
        return len(self.centers) * len(self.radii)


def dyadic_family(x0, R, centers_per_axis=32, steps=16, theta=math.sqrt(2.0)):
    """Centre lattice on the cube around ``x0`` and ladder ``R * theta**-k``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if theta <= 1:
        raise ParameterError("radius ratio theta must exceed 1")
    if centers_per_axis < 1:
        raise ParameterError("need at least one centre per axis")
    # a single centre per axis sits at x0
    axes = [np.linspace(c - R, c + R, centers_per_axis) if centers_per_axis > 1
            else np.array([c]) for c in x0]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(x0))
    keep = np.linalg.norm(grid - x0, axis=1) <= R * (1 + 1e-12)
    radii = R * theta ** -np.arange(steps - 1, -1, -1, dtype=float)
    return BallFamily(grid[keep], radii, float(R), x0, centers_per_axis, float(theta))


def refine_family(family):
    """Halve the log-spacing of the ladder and the spacing of the lattice."""
    if family.centers_per_axis is None:
        r = family.radii
        radii = np.sort(np.concatenate([r, np.sqrt(r[:-1] * r[1:])]))
        return BallFamily(family.centers, radii, family.R, family.x0)
    return dyadic_family(family.x0, family.R, 2 * family.centers_per_axis - 1,
                         2 * len(family.radii) - 1, math.sqrt(family.theta))


def _check_ball(radius, resolution):
    if not radius > 0:
        raise ParameterError("ball radius must be positive")
    if resolution < 4:
        raise ParameterError("quadrature resolution must be >= 4")


def ball_cells(w, center, radius, resolution):
    """Cell integrals, cell volumes, in-ball mask and cell centres of Q(center, radius)."""
    _check_ball(radius, resolution)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    edges = [np.linspace(c - radius, c + radius, resolution + 1) for c in center]
    ints = w.cell_integrals(edges)
    mids = np.stack(np.meshgrid(*[(e[:-1] + e[1:]) / 2 for e in edges], indexing="ij"),
                    axis=-1)
    vols = _outer([np.diff(e) for e in edges])
    if len(center) == 1:
        mask = np.ones(ints.shape, dtype=bool)
    else:
        mask = np.sum((mids - center) ** 2, axis=-1) <= radius ** 2
    return ints, vols, mask, mids


def weight_integral(w, center, radius, resolution=64):
    """Integral of ``w`` over the Euclidean ball Q(center, radius) in R^n."""
    _check_ball(radius, resolution)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if w.n == 1 and w.exact:
        return float(w.interval_integral(center[0] - radius, center[0] + radius))
    ints, _, mask, _ = ball_cells(w, center, radius, resolution)
    return float(np.sum(ints[mask]))


def ball_measure(n, center, radius, resolution=64):
    """Lebesgue measure of the ball as seen by the same quadrature mask."""
    return weight_integral(Weight.constant(1.0, n), center, radius, resolution)


def _family_integrals(weights, family, resolution, threads=1):
    """Matrix (centres x radii) of integrals for each weight, plus measures."""
    c, r = family.centers, family.radii
    if family.n == 1 and all(w.exact for w in weights):
        a = c[:, 0][:, None] - r[None, :]
        b = c[:, 0][:, None] + r[None, :]
        outs = [np.asarray(w.interval_integral(a, b), dtype=float) for w in weights]
        return outs, b - a

    def one(center):
        rows = [[] for _ in weights]
        meas = []
        for rad in r:
            edges = [np.linspace(x - rad, x + rad, resolution + 1) for x in center]
            mids = np.stack(np.meshgrid(*[(e[:-1] + e[1:]) / 2 for e in edges],
                                        indexing="ij"), axis=-1)
            mask = np.sum((mids - center) ** 2, axis=-1) <= rad ** 2
            vols = _outer([np.diff(e) for e in edges])
            meas.append(np.sum(vols[mask]))
            for k, w in enumerate(weights):
                rows[k].append(np.sum(w.cell_integrals(edges)[mask]))
        return rows, meas

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, c))
    else:
        results = [one(x) for x in c]
    outs = [np.array([res[0][k] for res in results]) for k in range(len(weights))]
    meas = np.array([res[1] for res in results])
    return outs, meas


# ---------------------------------------------------------------------------
# estimates


@dataclass
class Estimate:
    """Maximum of scanned ratios with its divergence diagnosis."""

    value: float
    diverged: bool
    level_values: list
    argmax: tuple | None = None
    ratios: np.ndarray | None = field(default=None, repr=False)

    def to_json(self):
        return {
            "value": _finite_or_none(self.value),
            "diverged": bool(self.diverged),
            "level_values": [_finite_or_none(v) for v in self.level_values],
            "argmax": None if self.argmax is None else {
                "center": [float(x) for x in self.argmax[0]],
                "radius": float(self.argmax[1])},
        }


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _estimate(ratios, family, factor=2.0):
    """Reduce a (centres x radii) ratio matrix to an :class:`Estimate`.

    Divergence: the running maximum taken over radii >= r_j, read at the
    three finest cut-offs, grows monotonically by more than ``factor``; a
    non-finite ratio also counts as divergence.
    """
    ratios = np.asarray(ratios, dtype=float)
    with np.errstate(invalid="ignore"):
        finite = bool(np.all(np.isfinite(ratios)))
        col = np.max(np.where(np.isnan(ratios), np.inf, ratios), axis=0)
    run = np.maximum.accumulate(col[::-1])[::-1]  # run[j] = max over radii >= r_j
    L = len(run)
    step = max(1, L // 4)
    idx = [min(L - 1, max(0, j)) for j in (2 * step, step, 0)]
    levels = [float(run[j]) for j in idx]
    grows = levels[0] < levels[1] < levels[2] and levels[2] > factor * levels[0]
    diverged = (not finite) or grows
    safe = np.where(np.isnan(ratios), np.inf, ratios)
    flat = int(np.argmax(safe))
    ci, ri = np.unravel_index(flat, ratios.shape)[:2]
    value = float(safe.flat[flat])
    return Estimate(value, diverged, levels,
                    (family.centers[ci], family.radii[ri]), ratios)


def ap_constant(w, p, family, resolution=64, divergence_factor=2.0, threads=1):
    """Max over the family of w(Q) * sigma(Q)**(p-1) / |Q|**p, sigma = w**(1-p')."""
    if not p > 1:
        raise ParameterError("A_p needs p > 1")
    if w.is_constant:
        # both averages are constants whose product is 1; skip the roundoff
        ratios = np.ones((len(family.centers), len(family.radii)))
        return _estimate(ratios, family, divergence_factor)
    sigma = w.pow(1.0 - p / (p - 1.0))
    (wq, sq), meas = _family_integrals([w, sigma], family, resolution, threads)
    with np.errstate(invalid="ignore", over="ignore"):
        ratios = wq * sq ** (p - 1.0) / meas ** p
    return _estimate(ratios, family, divergence_factor)


def _ball_infimum(w, center, radius, resolution):
    if w.n == 1 and w.kind in ("constant", "power"):
        if w.kind == "constant":
            return w.scale
        a, b = center[0] - radius, center[0] + radius
        alpha = w.exponents[0]
        if alpha > 0:
            return 0.0 if a <= 0 <= b else w.scale * min(abs(a), abs(b)) ** alpha
        return w.scale * max(abs(a), abs(b)) ** alpha
    _, _, mask, mids = ball_cells(w, center, radius, resolution)
    return float(np.min(w(mids[mask])))


def a1_constant(w, family, resolution=64, divergence_factor=2.0):
    """Max over the family of w(Q) / (|Q| * inf_Q w)."""
    (wq,), meas = _family_integrals([w], family, resolution)
    inf = np.array([[_ball_infimum(w, c, r, resolution) for r in family.radii]
                    for c in family.centers])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = wq / (meas * inf)
    return _estimate(ratios, family, divergence_factor)


@dataclass
class AinfFit:
    """Pair (C, delta) with v(E)/v(Q) <= C (|E|/|Q|)**delta on every probe."""

    C: float
    delta: float
    probes: int
    worst: tuple | None = None

    def satisfied_by(self, ratio, frac, slack=1e-9):
        return ratio <= self.C * frac ** self.delta * (1 + slack)


def _box_sums(a):
    """Summed-area table of an n-d array.

    Returns ``box(lo, hi)``: sums over the index boxes [lo_k, hi_k) for
    arrays ``lo``, ``hi`` of shape (n, boxes).
    """
    S = a
    for k in range(a.ndim):
        S = np.cumsum(S, axis=k)
    S = np.pad(S, [(1, 0)] * a.ndim)
    corners = list(itertools.product((0, 1), repeat=a.ndim))

    def box(lo, hi):
        total = np.zeros(lo.shape[1])
        for bits in corners:
            idx = tuple(np.where(b, hi[k], lo[k]) for k, b in enumerate(bits))
            total += (-1) ** (a.ndim - sum(bits)) * S[idx]
        return total

    return box


def _probe_ratios(v, family, probe_count, resolution):
    """(v(E)/v(Q), |E|/|Q|) for sub-boxes at 5 dyadic scales and half-balls."""
    ratios, fracs = [], []
    for c in family.centers:
        for r in family.radii:
            if v.n == 1 and v.exact:
                vq = float(v.interval_integral(c[0] - r, c[0] + r))
                for k in range(1, 6):
                    L = 2 * r / 2 ** k
                    a = np.linspace(c[0] - r, c[0] + r - L, probe_count)
                    ratios.append(v.interval_integral(a, a + L) / vq)
                    fracs.append(np.full(probe_count, L / (2 * r)))
                ratios.append(np.array([1.0]))
                fracs.append(np.array([1.0]))
                continue
            ints, vols, mask, mids = ball_cells(v, c, r, resolution)
            vq, mq = np.sum(ints[mask]), np.sum(vols[mask])
            box_v = _box_sums(np.where(mask, ints, 0.0))
            box_m = _box_sums(np.where(mask, vols, 0.0))
            axes = [np.moveaxis(mids[..., k], k, 0)[(slice(None),) + (0,) * (v.n - 1)]
                    for k in range(v.n)]
            npos = min(probe_count, 8)
            for k in range(1, 6):
                L = 2 * r / 2 ** k
                starts = np.linspace(-r, r - L, npos)
                # cells whose centres fall in [lo, lo + L) along each axis
                lo_ax = [np.searchsorted(ax, c[j] + starts, "left") for j, ax in enumerate(axes)]
                hi_ax = [np.searchsorted(ax, c[j] + starts + L, "left")
                         for j, ax in enumerate(axes)]
                pick = [g.reshape(-1) for g in np.meshgrid(*[np.arange(npos)] * v.n,
                                                            indexing="ij")]
                lo = np.array([lo_ax[j][pick[j]] for j in range(v.n)])
                hi = np.array([hi_ax[j][pick[j]] for j in range(v.n)])
                m_sub = box_m(lo, hi)
                keep = m_sub > 0
                ratios.append(box_v(lo, hi)[keep] / vq)
                fracs.append(m_sub[keep] / mq)
            for axis in range(v.n):
                for sign in (1.0, -1.0):
                    sub = mask & (sign * (mids[..., axis] - c[axis]) >= 0)
                    ratios.append(np.array([np.sum(ints[sub]) / vq]))
                    fracs.append(np.array([np.sum(vols[sub]) / mq]))
            ratios.append(np.array([1.0]))
            fracs.append(np.array([1.0]))
    return np.concatenate(ratios), np.concatenate(fracs)


def ainf_params(v, family, probe_count=16, resolution=64, C=1.0):
    """Fit the A_infinity pair: C fixed (>= 1, forced by E = Q), delta maximal."""
    if probe_count < 8:
        raise ParameterError("A_infinity fit needs at least 8 probes")
    if C < 1:
        raise ParameterError("C < 1 contradicts the E = Q probe")
    ratio, frac = _probe_ratios(v, family, probe_count, resolution)
    use = (frac < 1.0) & (ratio > 0)
    with np.errstate(divide="ignore"):
        deltas = np.log(np.minimum(ratio[use] / C, 1.0)) / np.log(frac[use])
    delta = float(min(1.0, deltas.min())) if deltas.size else 1.0
    if delta > 1.0 - 1e-9:
        delta = 1.0
    if not delta > 0:
        raise InvalidWeightError("weight mass concentrates on a probe; no A_inf exponent")
    worst = None
    if deltas.size:
        j = int(np.argmin(deltas))
        worst = (float(ratio[use][j]), float(frac[use][j]))
    return AinfFit(float(C), delta, int(ratio.size), worst)


def doubling_constant(w, family, resolution=64, divergence_factor=2.0, threads=1):
    """Max over the family of w(2Q) / w(Q)."""
    doubled = BallFamily(family.centers, 2 * family.radii, 2 * family.R, family.x0)
    (w1,), _ = _family_integrals([w], family, resolution, threads)
    (w2,), _ = _family_integrals([w], doubled, resolution, threads)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = w2 / w1
    return _estimate(ratios, family, divergence_factor)


def balance_exponents(p, q, n, m):
    """Exponents (radius, omega) of the two-weight balance expression."""
    d = 1.0 / p - 1.0 / q
    return 1.0 - m * (n + p) / p * d, 1.0 / p - m / p * d


def _check_balance(p, q, n, m):
    if p > q:
        raise ParameterError("balance condition requires p <= q")
    e_w = balance_exponents(p, q, n, m)[1]
    if e_w < 0:
        raise ParameterError(
            "balance condition requires 1/p - (m/p)(1/p - 1/q) >= 0, "
            f"got {e_w:.6g}")


def balance_constant(v, omega, p, q, n, m, family, resolution=64,
                     divergence_factor=2.0, threads=1):
    """Max over centres and nested radii r < R' of the balance ratio."""
    _check_balance(p, q, n, m)
    e_r, e_w = balance_exponents(p, q, n, m)
    (vq, wq), _ = _family_integrals([v, omega], family, resolution, threads)
    r = family.radii
    i, j = np.triu_indices(len(r), k=1)  # r[i] < r[j]
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        ratios = ((r[i] / r[j]) ** e_r * (vq[:, i] / vq[:, j]) ** (1.0 / q)
                  / (wq[:, i] / wq[:, j]) ** e_w)
    # attribute each pair to its smaller radius for the divergence cut-offs
    per_radius = np.full((len(family.centers), len(r)), -np.inf)
    for k in range(len(r) - 1):
        sel = i == k
        per_radius[:, k] = np.max(np.where(np.isnan(ratios[:, sel]), np.inf,
                                           ratios[:, sel]), axis=1)
    est = _estimate(per_radius[:, :-1] if len(r) > 1 else per_radius, family,
                    divergence_factor)
    est.diverged = est.diverged or not bool(np.all(np.isfinite(ratios)))
    est.ratios = ratios
    return est


@dataclass
class CompactnessProfile:
    radii: list
    bounds: list
    fraction: float

    @property
    def passed(self):
        return bool(np.isfinite(self.bounds[-1]) and np.isfinite(self.bounds[0])
                    and self.bounds[-1] < self.fraction * self.bounds[0])

    def to_json(self):
        return {"radius": [float(r) for r in self.radii],
                "bound": [_finite_or_none(b) for b in self.bounds],
                "fraction": self.fraction, "passed": self.passed}


def compactness_profile(v, omega, p, q, n, m, family, resolution=64, fraction=0.1,
                        threads=1):
    """Tabulate r -> max_c r**e_r v(Q_r)**(1/q) / omega(Q_r)**e_w, radii decreasing."""
    _check_balance(p, q, n, m)
    e_r, e_w = balance_exponents(p, q, n, m)
    (vq, wq), _ = _family_integrals([v, omega], family, resolution, threads)
    r = family.radii
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        vals = r[None, :] ** e_r * vq ** (1.0 / q) / wq ** e_w
    vals = np.where(np.isnan(vals), np.inf, vals)
    bounds = np.max(vals, axis=0)[::-1]
    return CompactnessProfile(list(r[::-1]), list(bounds), fraction)


# ---------------------------------------------------------------------------
# exponent ranges


@dataclass
class ExponentVerdict:
    valid: bool
    violations: list
    checks: dict
    caveats: list = field(default_factory=list)

    def to_json(self):
        return {"valid": self.valid, "violations": list(self.violations),
                "checks": self.checks, "caveats": list(self.caveats)}


def _is_exact(*xs):
    return all(isinstance(x, (int, Fraction)) for x in xs)


def _inside(x, lo, hi, exact):
    """Open-interval membership; floats get 1e-12 slack towards exclusion."""
    if exact:
        return (lo is None or x > lo) and (hi is None or x < hi)
    tol = 1e-12
    return (lo is None or x > lo + tol * max(1.0, abs(lo))) and (
        hi is None or x < hi - tol * max(1.0, abs(hi)))


def _num(x):
    return float(x)


def validate_exponents(p, q, gamma, mu, n, m, v_is_multiple_of_omega=False):
    """Check the exponent ranges for two positive solutions, including the
    sharper q ranges that apply when v is a multiple of omega.
    """
    if n < 1 or m < 1:
        raise ParameterError("n and m must be >= 1")
    exact = _is_exact(p, q, gamma, mu)
    N = n + m
    one = Fraction(1) if exact else 1.0
    checks = {}
    violations = []
    caveats = []

    def record(name, x, lo, hi):
        ok = _inside(x, lo, hi, exact)
        checks[name] = {"value": _num(x), "lower": None if lo is None else _num(lo),
                        "upper": None if hi is None else _num(hi), "ok": bool(ok)}
        if not ok:
            lo_s = "-inf" if lo is None else f"{_num(lo):.6g}"
            hi_s = "inf" if hi is None else f"{_num(hi):.6g}"
            violations.append(f"{name}: {_num(x):.6g} not in ({lo_s}, {hi_s})")
        return ok

    record("p", p, one, N * one)
    q_hi = p * N / (N - p) if p < N else None
    record("q", q, p, q_hi)
    if v_is_multiple_of_omega:
        if m > p:
            hi = p * m * (n + p) / (m * (n + p) - p * p)
            record("q_v_multiple_m_gt_p", q, p, hi)
        elif m == 1:
            k = p * p - p + 1
            hi = (p * n * k + p * p) / (n * k + p - p * p)
            record("q_v_multiple_m_eq_1", q, p, hi)
        elif m == p:
            record("q_v_multiple_m_eq_p", q, p, p * (n + p) / n)
        else:
            violations.append("q_v_multiple: no range stated for 1 < m < p")
            checks["q_v_multiple"] = {"ok": False, "value": _num(q)}
    strict = _inside(gamma, one, N * one / (N - 1), exact)
    relaxed = _inside(gamma, one, p, exact)
    checks["gamma_strict"] = {"value": _num(gamma), "lower": 1.0,
                              "upper": N / (N - 1), "ok": bool(strict)}
    checks["gamma_relaxed"] = {"value": _num(gamma), "lower": 1.0, "upper": _num(p),
                               "ok": bool(relaxed)}
    if not strict:
        if relaxed:
            caveats.append("gamma in (1, p) only: requires v**(-gamma/(q-gamma)) "
                           "locally integrable")
        else:
            violations.append(f"gamma: {_num(gamma):.6g} outside (1, {N / (N - 1):.6g}) "
                              f"and (1, {_num(p):.6g})")
    record("mu", mu, 0 * one, None)
    return ExponentVerdict(not violations, violations, checks, caveats)


# ---------------------------------------------------------------------------
# report


@dataclass
class WeightReport:
    ap: Estimate
    a1: Estimate
    ainf: AinfFit
    doubling: Estimate
    balance: Estimate
    compactness: CompactnessProfile
    exponents: ExponentVerdict

    @property
    def passed(self):
        return (not self.ap.diverged and not self.balance.diverged
                and not self.doubling.diverged and self.compactness.passed
                and self.exponents.valid)

    def to_json(self):
        return {
            "ap_constant": _finite_or_none(self.ap.value),
            "a1_constant": None if self.a1.diverged else _finite_or_none(self.a1.value),
            "ainf_C": self.ainf.C,
            "ainf_delta": self.ainf.delta,
            "doubling_constant": _finite_or_none(self.doubling.value),
            "balance_constant": _finite_or_none(self.balance.value),
            "compactness_profile": self.compactness.to_json(),
            "diverged": {"ap": self.ap.diverged, "a1": self.a1.diverged,
                         "doubling": self.doubling.diverged,
                         "balance": self.balance.diverged},
            "details": {"ap": self.ap.to_json(), "doubling": self.doubling.to_json(),
                        "balance": self.balance.to_json()},
            "exponents": self.exponents.to_json(),
            "passed": self.passed,
        }


def weight_report(omega, v, p, q, gamma, mu, n, m, family, compact_family,
                  resolution=64, probe_count=16, fraction=0.1,
                  v_is_multiple_of_omega=False, threads=1):
    """Run every weight estimator for the problem parameters."""
    verdict = validate_exponents(p, q, gamma, mu, n, m, v_is_multiple_of_omega)
    return WeightReport(
        ap=ap_constant(omega, p, family, resolution, threads=threads),
        a1=a1_constant(omega, family, resolution),
        ainf=ainf_params(v, family, probe_count, resolution),
        doubling=doubling_constant(omega, family, resolution, threads=threads),
        balance=balance_constant(v, omega, p, q, n, m, family, resolution,
                                 threads=threads),
        compactness=compactness_profile(v, omega, p, q, n, m, compact_family,
                                        resolution, fraction, threads),
        exponents=verdict,
    )
