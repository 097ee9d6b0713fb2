"""Beltrami coefficients on a fundamental polygon and the first variation of cross-ratios.

A coefficient is given on the polygon (in upper half-plane coordinates) and
extended to the plane by mu(g z) = mu(z) g'(z) / conj(g'(z)).  The variation

    -(2/pi) Re  integral over H of mu(z) (a-b)(c-d) / ((z-a)(z-b)(z-c)(z-d)) dx dy

is summed tile by tile over translates of the polygon, in generations of the
side-pairing word length, until a generation contributes less than a fixed
fraction of the running total.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numba
import numpy as np

from . import moebius as mb
from .errors import ArcsNotSeparated, TruncationBudget
from .fuchsian import FuchsianRep, FundamentalPolygon, OrbitSet
from .moebius import Arc

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


# ---------------------------------------------------------------------------
# quadrature on the polygon


def _triangle_rule(order: int):
    """Collapsed Gauss-Legendre rule on the reference triangle (0,0), (1,0), (0,1)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1) / 2
    w = w / 2
    u, v = np.meshgrid(x, x, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    s = u.ravel()
    t = (v * (1 - u)).ravel()
    weight = (wu * wv * (1 - u)).ravel()
    return s, t, weight


def _subdivide(tri: np.ndarray, levels: int) -> np.ndarray:
    """Split triangles (N x 3 complex) into 4**levels congruent pieces."""
    for _ in range(levels):
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tri = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1)
        ])
    return tri


@dataclass
class PolygonRule:
    """Quadrature nodes (half-plane points) and weights for dx dy over a polygon."""

    z: np.ndarray
    w: np.ndarray

    @classmethod
    def build(cls, polygon: FundamentalPolygon, refine: int = 2, order: int = 6) -> "PolygonRule":
        kv = polygon.klein_vertices
        center = kv.mean()
        tri = np.stack([np.full(len(kv), center), kv, np.roll(kv, -1)], axis=1)
        tri = _subdivide(tri, refine)
        s, t, wt = _triangle_rule(order)
        a, b, c = tri[:, 0:1], tri[:, 1:2], tri[:, 2:3]
        k = a + s[None] * (b - a) + t[None] * (c - a)
        area = np.abs(((b - a).conj() * (c - a)).imag).ravel()
        wk = (wt[None] * area[:, None])
        disk = mb.klein_to_disk(k)
        z = mb.disk_to_half(disk)
        # dx dy = y^2 dA_hyp and dA_hyp = dk / (1 - |k|^2)^(3/2)
        jac = z.imag**2 / (1 - np.abs(k) ** 2) ** 1.5
        return cls(z.ravel(), (wk * jac).ravel())

    def area_hyperbolic(self) -> float:
        return float(np.sum(self.w / self.z.imag**2))


# ---------------------------------------------------------------------------
# coefficients


class BeltramiCoefficient:
    """Bounded complex function on the polygon; ``values`` takes half-plane points."""

    name = "beltrami"

    def values(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def sup_norm(self) -> float:
        raise NotImplementedError

    def scaled(self, factor: complex) -> "BeltramiCoefficient":
        return ScaledBeltrami(self, factor)

    def describe(self) -> dict:
        return {"name": self.name, "sup_norm": self.sup_norm}


class ScaledBeltrami(BeltramiCoefficient):
    def __init__(self, base: BeltramiCoefficient, factor: complex):
        self.base = base
        self.factor = factor
        self.name = f"{factor}*{base.name}"

    def values(self, z):
        return self.factor * self.base.values(z)

    @property
    def sup_norm(self):
        return abs(self.factor) * self.base.sup_norm


@dataclass
class ConstantBeltrami(BeltramiCoefficient):
    """Constant value on the polygon."""

    value: complex = 0j
    name: str = "constant"

    def values(self, z):
        return np.full(np.shape(z), complex(self.value))

    @property
    def sup_norm(self):
        return abs(self.value)


@dataclass
class BumpBeltrami(BeltramiCoefficient):
    """amplitude * (1 - (d/radius)^2)^2 for hyperbolic distance d to a disk-model center."""

    center: complex = 0j
    radius: float = 0.5
    amplitude: complex = 0.1
    name: str = "bump"

    def values(self, z):
        w = mb.half_to_disk(np.asarray(z))
        d = mb.hyperbolic_distance_disk(w, self.center)
        x = np.clip(1 - (d / self.radius) ** 2, 0, None)
        return complex(self.amplitude) * x**2

    @property
    def sup_norm(self):
        return abs(self.amplitude)


@dataclass
class GridBeltrami(BeltramiCoefficient):
    """Tabulated samples at disk points, linearly interpolated (nearest value outside the hull)."""

    points: np.ndarray
    samples: np.ndarray
    name: str = "grid"
    _lin: object = field(default=None, repr=False)
    _near: object = field(default=None, repr=False)

    def __post_init__(self):
        from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

        pts = np.column_stack([np.real(self.points), np.imag(self.points)])
        self._lin = LinearNDInterpolator(pts, self.samples)
        self._near = NearestNDInterpolator(pts, self.samples)

    @classmethod
    def from_json(cls, text: str) -> "GridBeltrami":
        data = json.loads(text)
        pts = np.array([complex(x, y) for x, y in data["points"]])
        vals = np.array([complex(re, im) for re, im in data["values"]])
        return cls(pts, vals, data.get("name", "grid"))

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "points": [[p.real, p.imag] for p in self.points],
            "values": [[v.real, v.imag] for v in self.samples],
        })

    def values(self, z):
        w = mb.half_to_disk(np.asarray(z))
        xy = np.column_stack([np.real(w).ravel(), np.imag(w).ravel()])
        out = self._lin(xy)
        bad = np.isnan(out)
        if bad.any():
            out[bad] = self._near(xy[bad])
        return out.reshape(np.shape(z))

    @property
    def sup_norm(self):
        return float(np.max(np.abs(self.samples)))


class TwistCollarBeltrami(BeltramiCoefficient):
    """Infinitesimal twist supported in a collar around every lift of a closed geodesic.

    For a lift sent to the imaginary axis, in the coordinate w = log z the
    deformation moves Re w by ``amplitude * s(Im w)`` where s climbs from 0 to
    1 across the band |Im w - pi/2| < beta.  The band has hyperbolic
    half-width ``width``.  ``amplitude`` 1 is one unit of twist.
    """

    def __init__(self, rep: FuchsianRep, word: tuple, polygon: FundamentalPolygon, width: float = 0.3,
                 amplitude: float = 1.0, depth: int = 6):
        from .crossratio import AtomicCurveCurrent

        self.word = tuple(word)
        self.width = width
        self.amplitude = amplitude
        self.name = f"twist-collar[{self.word}]"
        curve = AtomicCurveCurrent(rep, self.word, depth=depth)
        reach = polygon_circumradius(polygon) + width
        p, q = curve.lifts[:, 0], curve.lifts[:, 1]
        d0 = _axis_distance_to_origin(p, q)
        keep = d0 <= reach
        self.lifts = curve.lifts[keep]
        # half-plane normalizers: T sends the lift's repelling end to 0 and attracting end to infinity
        xs = mb.theta_to_x(self.lifts[:, 1])
        xa = mb.theta_to_x(self.lifts[:, 0])
        self._maps = [_axis_normalizer(r, a) for r, a in zip(xs, xa)]
        # angular half-width: distance r from the axis has sin(theta) = 1 / cosh(r)
        self.beta = math.pi / 2 - math.asin(1 / math.cosh(width))

    def _profile_derivative(self, theta):
        u = (theta - math.pi / 2) / self.beta
        inside = np.abs(u) < 1
        return np.where(inside, np.cos(np.pi * u / 2) ** 2 / self.beta, 0.0)

    def values(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for a, b, c, d in self._maps:
            zeta = (a * z + b) / (c * z + d)
            theta = np.angle(zeta)
            sp = self._profile_derivative(theta)
            if not sp.any():
                continue
            mu_zeta = 0.5j * self.amplitude * sp * zeta / np.conj(zeta)
            deriv = 1.0 / (c * z + d) ** 2
            out += mu_zeta * np.conj(deriv) / deriv
        return out

    @property
    def sup_norm(self):
        return abs(self.amplitude) / (2 * self.beta)


def polygon_circumradius(polygon: FundamentalPolygon) -> float:
    return float(np.max(mb.hyperbolic_distance_disk(polygon.vertices, 0j)))


def _axis_distance_to_origin(p, q):
    """Hyperbolic distance from the disk center to the geodesic with endpoint angles p, q."""
    half = np.abs(np.sin((np.asarray(p) - np.asarray(q)) / 2))
    # the chord sits at Euclidean (Klein) distance cos(phi/2) where phi is the angular span
    k = np.sqrt(np.clip(1 - half**2, 0, 1))
    return np.arctanh(np.clip(k, 0, 1 - 1e-16))


def _axis_normalizer(x_rep: float, x_att: float):
    """Real Möbius coefficients sending x_rep to 0 and x_att to infinity, orientation preserving."""
    if math.isinf(x_att):
        return (1.0, -x_rep, 0.0, 1.0)
    if math.isinf(x_rep):
        return (0.0, -1.0, 1.0, -x_att)
    # z -> (z - x_rep) / (z - x_att) has determinant x_rep - x_att
    s = 1.0 if x_rep > x_att else -1.0
    return (s, -s * x_rep, 1.0, -x_att)


# ---------------------------------------------------------------------------
# first variation


def _kernel(z, a, b, c, d):
    """(a-b)(c-d)/((z-a)(z-b)(z-c)(z-d)) with limits when one point is infinite."""
    pts = [a, b, c, d]
    inf = [math.isinf(x) for x in pts]
    if not any(inf):
        return (a - b) * (c - d) / ((z - a) * (z - b) * (z - c) * (z - d))
    k = inf.index(True)
    # (x - y)/(z - x) tends to -1 as x -> infinity
    if k == 0:
        return -(c - d) / ((z - b) * (z - c) * (z - d))
    if k == 1:
        return (c - d) / ((z - a) * (z - c) * (z - d))
    if k == 2:
        return -(a - b) / ((z - a) * (z - b) * (z - d))
    return (a - b) / ((z - a) * (z - b) * (z - c))


@numba.njit(parallel=True, cache=True)
def _tile_sums(mats, z0, w0, mu0, pts, k_inf):
    n = mats.shape[0]
    out = np.zeros(n, dtype=np.complex128)
    a, b, c, d = pts[0], pts[1], pts[2], pts[3]
    for t in numba.prange(n):
        ga, gb, gc, gd = mats[t, 0, 0], mats[t, 0, 1], mats[t, 1, 0], mats[t, 1, 1]
        acc = 0j
        for j in range(z0.shape[0]):
            z = z0[j]
            den = gc * z + gd
            gz = (ga * z + gb) / den
            deriv = 1.0 / (den * den)
            if k_inf == 0:
                ker = -(c - d) / ((gz - b) * (gz - c) * (gz - d))
            elif k_inf == 1:
                ker = (c - d) / ((gz - a) * (gz - c) * (gz - d))
            elif k_inf == 2:
                ker = -(a - b) / ((gz - a) * (gz - b) * (gz - d))
            elif k_inf == 3:
                ker = (a - b) / ((gz - a) * (gz - b) * (gz - c))
            else:
                ker = (a - b) * (c - d) / ((gz - a) * (gz - b) * (gz - c) * (gz - d))
            ad = abs(deriv)
            acc += mu0[j] * (deriv / np.conj(deriv)) * ker * ad * ad * w0[j]
        out[t] = acc
    return out


@dataclass
class VariationResult:
    value: float
    truncation: float
    generations: list
    tiles: int
    quadrature: float = 0.0

    @property
    def error(self) -> float:
        return self.truncation + self.quadrature

    def to_dict(self) -> dict:
        return {"value": self.value, "truncation": self.truncation, "quadrature": self.quadrature,
                "generations": self.generations, "tiles": self.tiles}


def _supported(mu: BeltramiCoefficient, rule: PolygonRule):
    m = mu.values(rule.z)
    keep = m != 0
    return rule.z[keep], rule.w[keep], np.ascontiguousarray(m[keep], dtype=np.complex128)


def beltrami_first_variation(mu: BeltramiCoefficient, I: Arc, J: Arc, rep: FuchsianRep,
                             polygon: FundamentalPolygon, rtol: float = 1e-3, atol: float = 5e-6, max_generations: int = 12,
                             max_tiles: int = 5_000_000, rule: PolygonRule | None = None,
                             refine: int = 3, order: int = 6) -> VariationResult:
    """First variation of the Liouville mass of (I, J) under the deformation mu.

    Tiles are visited in generations of side-pairing word length; summation
    stops once a generation adds less than ``rtol`` times the running total
    (or ``atol``) for two generations in a row.
    The truncation estimate extrapolates the last generations geometrically.
    The quadrature estimate compares the first two generations against a rule
    one refinement coarser and scales the discrepancy to the whole sum.
    """
    if not mb.arcs_separated(I, J):
        raise ArcsNotSeparated(f"{I} and {J} do not have disjoint closures")
    if rule is None:
        rule = PolygonRule.build(polygon, refine=refine, order=order)
        coarse = PolygonRule.build(polygon, refine=refine - 1, order=order) if refine > 0 else None
    else:
        coarse = None
    z0, w0, mu0 = _supported(mu, rule)
    if len(z0) == 0:
        return VariationResult(0.0, 0.0, [0.0], 1)
    ends = [float(mb.theta_to_x(t)) for t in (I.start, I.end, J.start, J.end)]
    k_inf = next((i for i, x in enumerate(ends) if math.isinf(x)), -1)
    pts = np.array([0.0 if math.isinf(x) else x for x in ends])
    sides = np.array([m.matrix for _, m in polygon.side_pairings])
    frontier = np.eye(2)[None]
    # a tile's neighbours lie in the previous, current or next generation
    seen = OrbitSet(window=3)
    seen.add(frontier)
    gens, early = [], []
    n_tiles = 0
    for gen in range(max_generations + 1):
        part = complex(np.sum(_tile_sums(np.ascontiguousarray(frontier), z0, w0, mu0, pts, k_inf)))
        n_tiles += len(frontier)
        g_val = -2 / math.pi * part.real
        gens.append(g_val)
        if gen < 2:
            early.append(frontier)
        total = math.fsum(gens)
        tol = max(rtol * abs(total), atol)
        if gen >= 2 and abs(g_val) < tol and abs(gens[-2]) < 10 * tol:
            ratio = min(abs(gens[-1]) / max(abs(gens[-2]), 1e-300), 0.9)
            quad = 0.0
            if coarse is not None:
                zc, wc, mc = _supported(mu, coarse)
                mats = np.ascontiguousarray(np.concatenate(early))
                fine_sum = -2 / math.pi * float(np.sum(_tile_sums(mats, z0, w0, mu0, pts, k_inf)).real)
                coarse_sum = -2 / math.pi * float(np.sum(_tile_sums(mats, zc, wc, mc, pts, k_inf)).real) if len(zc) else 0.0
                scale = abs(total) / max(abs(fine_sum), 1e-300)
                quad = abs(fine_sum - coarse_sum) * min(scale, 10.0)
            return VariationResult(total, abs(g_val) * ratio / (1 - ratio), gens, n_tiles, quad)
        if gen == max_generations:
            break
        nxt = (frontier[:, None] @ sides[None]).reshape(-1, 2, 2)
        frontier = nxt[seen.add(nxt)]
        if n_tiles + len(frontier) > max_tiles:
            break
    raise TruncationBudget(f"tile sum not converged after {len(gens)} generations ({n_tiles} tiles); "
                           f"last generations {gens[-3:]}")
