"""Cross-ratio functions: Liouville currents, their infinitesimal variations and curve currents.

Every instance evaluates on pairs of boundary arcs and, for fast summation,
on all pairs of arcs of a circle partition at once (:meth:`grid_matrix`).
Arcs are given by counterclockwise endpoint angles in the base disk
coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import moebius as mb
from .errors import ArcsNotSeparated, DepthTooSmall, DerivativeUnstable, ScaleRangeTooNarrow
from .fuchsian import (
    BoundaryMap,
    FuchsianRep,
    FundamentalPolygon,
    Surface,
    TeichPath,
    enumerate_group,
    format_word,
)
from .moebius import Arc


def _lift(theta: np.ndarray) -> np.ndarray:
    """Monotone lift of the images of an increasing angle grid."""
    return np.unwrap(np.asarray(theta, dtype=float))


def _grid_liouville(images: np.ndarray) -> np.ndarray:
    """Liouville masses of all arc pairs of a partition from the lifted images of its endpoints.

    ``images`` has m+1 entries, the last one being the first plus 2pi.  Pairs
    of arcs whose closures meet get 0.
    """
    t = np.asarray(images, dtype=float)
    m = len(t) - 1
    i, j = np.triu_indices(m, k=2)
    ok = ~((i == 0) & (j == m - 1))
    i, j = i[ok], j[ok]
    u = t[i + 1] - t[i]
    v = t[j] - t[i + 1]
    w = t[j + 1] - t[j]
    mass = mb.liouville_mass_gaps(u, v, w)
    out = np.zeros((m, m))
    out[i, j] = mass
    out[j, i] = mass
    return out


def _check_arcs(I: Arc, J: Arc) -> None:
    if not mb.arcs_separated(I, J):
        raise ArcsNotSeparated(f"{I} and {J} do not have disjoint closures")


class CrossRatioFn:
    """Finitely additive functional on pairs of arcs with disjoint closures.

    Subclasses implement :meth:`endpoints_mass` on arrays of endpoint angles
    and may override :meth:`grid_matrix` with a faster route.
    """

    name = "cross-ratio"
    symmetric = True
    nonnegative = False
    nu: float | None = None
    c0: float | None = None
    c1: float = 0.5

    def endpoints_mass(self, a, b, c, d) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, I: Arc, J: Arc) -> float:
        _check_arcs(I, J)
        return float(np.asarray(self.endpoints_mass(I.start, I.end, J.start, J.end)).reshape(()))

    def grid_matrix(self, angles: np.ndarray) -> np.ndarray:
        """Values on all pairs of arcs [angles[i], angles[i+1]] (0 for touching pairs)."""
        g = np.asarray(angles, dtype=float)
        m = len(g) - 1
        i, j = np.triu_indices(m, k=2)
        ok = ~((i == 0) & (j == m - 1))
        i, j = i[ok], j[ok]
        out = np.zeros((m, m))
        out[i, j] = self.endpoints_mass(g[i], g[i + 1], g[j], g[j + 1])
        if self.symmetric:
            out[j, i] = out[i, j]
        else:
            out[j, i] = self.endpoints_mass(g[j], g[j + 1], g[i], g[i + 1])
        return out

    def scaled(self, factor: float) -> "CrossRatioFn":
        return ScaledCrossRatio(self, factor)

    def __mul__(self, factor: float) -> "CrossRatioFn":
        return self.scaled(factor)

    __rmul__ = __mul__

    def describe(self) -> dict:
        return {"name": self.name, "symmetric": self.symmetric, "nonnegative": self.nonnegative, "nu": self.nu}


class ZeroCrossRatio(CrossRatioFn):
    name = "zero"
    nonnegative = True
    nu = 1.0

    def endpoints_mass(self, a, b, c, d):
        return np.zeros(np.broadcast(np.asarray(a), np.asarray(c)).shape)

    def grid_matrix(self, angles):
        m = len(angles) - 1
        return np.zeros((m, m))


class ScaledCrossRatio(CrossRatioFn):
    def __init__(self, base: CrossRatioFn, factor: float):
        self.base = base
        self.factor = float(factor)
        self.name = f"{self.factor:g}*{base.name}"
        self.symmetric = base.symmetric
        self.nonnegative = base.nonnegative and self.factor >= 0
        self.nu = base.nu

    def endpoints_mass(self, a, b, c, d):
        return self.factor * self.base.endpoints_mass(a, b, c, d)

    def grid_matrix(self, angles):
        return self.factor * self.base.grid_matrix(angles)


class LiouvilleCurrent(CrossRatioFn):
    """Liouville current of a hyperbolic structure, read in base disk coordinates.

    Without ``transport`` the current is that of the structure whose circle is
    the base circle.  With a boundary map from the base structure, arc
    endpoints are pushed through it first.  ``interpolation`` selects the
    exact equivariant evaluation of the map ("exact") or its piecewise-linear
    sample interpolation ("linear").
    """

    nonnegative = True
    nu = 1.0

    def __init__(self, rep: FuchsianRep | None = None, transport: BoundaryMap | None = None,
                 interpolation: str = "exact", name: str = "liouville"):
        if interpolation not in ("exact", "linear"):
            raise ValueError("interpolation must be 'exact' or 'linear'")
        self.rep = rep
        self.transport = transport
        self.interpolation = interpolation
        self.name = name

    @classmethod
    def on(cls, surface: Surface, target=None, depth: int = 8, **kw) -> "LiouvilleCurrent":
        """Current of ``target`` (FN point or representation) transported to the surface's circle."""
        if target is None:
            return cls(surface.rep, None, **kw)
        return cls(surface.rep, surface.boundary_map(target, depth), **kw)

    def push(self, theta):
        if self.transport is None:
            return np.asarray(theta, dtype=float)
        if self.interpolation == "exact":
            return self.transport.exact(theta)
        return self.transport(theta)

    def endpoints_mass(self, a, b, c, d):
        a, b, c, d = (self.push(x) for x in (a, b, c, d))
        return mb.liouville_mass_angles(a, b, c, d)

    def grid_matrix(self, angles):
        return _grid_liouville(_lift(self.push(np.asarray(angles, dtype=float))))


class InfinitesimalLiouville(CrossRatioFn):
    """t-derivative of the transported Liouville current along a Teichmüller path.

    Central differences with step h; with ``fd_order`` 4 the steps h and h/2
    are combined by Richardson extrapolation.  The difference between the two
    step sizes is the reported error estimate, and a relative change above
    ``rtol`` raises :class:`DerivativeUnstable`.
    """

    nonnegative = False
    nu = 0.9

    def __init__(self, surface: Surface, path: TeichPath, h: float | None = None, fd_order: int = 4,
                 depth: int = 8, rtol: float = 0.1, atol: float = 1e-12):
        if fd_order not in (2, 4):
            raise ValueError("fd_order must be 2 or 4")
        self.surface = surface
        self.path = path
        self.h = float(path.h if h is None else h)
        self.fd_order = fd_order
        self.depth = depth
        self.rtol = rtol
        self.atol = atol
        self.name = f"LV[{path.name}]"
        self.last_error = 0.0

    def current(self, t: float) -> LiouvilleCurrent:
        return LiouvilleCurrent.on(self.surface, self.path.at(t), self.depth)

    def _combine(self, fn):
        h = self.h
        d1 = (fn(self.current(h)) - fn(self.current(-h))) / (2 * h)
        d2 = (fn(self.current(h / 2)) - fn(self.current(-h / 2))) / h
        diff = np.abs(d2 - d1)
        scale = np.linalg.norm(np.ravel(d2))
        if np.linalg.norm(np.ravel(diff)) > self.rtol * scale + self.atol * math.sqrt(max(np.size(d2), 1)):
            raise DerivativeUnstable(
                f"step halving changed the derivative by {np.linalg.norm(np.ravel(diff)):.3g} (norm {scale:.3g})"
            )
        if self.fd_order == 2:
            value = d1
        else:
            value = (4 * d2 - d1) / 3
        err = np.abs(value - d2)
        self.last_error = float(np.max(err)) if np.size(err) else 0.0
        return value, err

    def evaluate_with_error(self, I: Arc, J: Arc) -> tuple[float, float]:
        _check_arcs(I, J)
        v, e = self._combine(lambda L: L.endpoints_mass(I.start, I.end, J.start, J.end))
        return float(np.ravel(v)[0]), float(np.ravel(e)[0])

    def endpoints_mass(self, a, b, c, d):
        return self._combine(lambda L: L.endpoints_mass(a, b, c, d))[0]

    def grid_matrix(self, angles):
        return self.grid_matrix_with_error(angles)[0]

    def grid_matrix_with_error(self, angles):
        return self._combine(lambda L: L.grid_matrix(angles))


# ---------------------------------------------------------------------------
# closed curves


def _in_ccw(x, a, b):
    """x in the half-open arc [a, b) (ccw), vectorized."""
    return mb.ccw_distance(a, x) < mb.ccw_distance(a, b)


def _chord_meets_polygon(kv: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Whether the chords (p, q) (boundary angles) meet the convex Klein polygon with vertices kv."""
    ep = np.exp(1j * p)
    eq = np.exp(1j * q)
    d = eq - ep
    side = ((np.conj(d)[:, None] * (kv[None, :] - ep[:, None])).imag)
    return (side.max(axis=1) > 0) & (side.min(axis=1) < 0)


def _distinct_geodesics(ends: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Indices of the first member of each cluster of (nearly) equal oriented geodesics."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    pts = np.column_stack([np.cos(ends[:, 0]), np.sin(ends[:, 0]), np.cos(ends[:, 1]), np.sin(ends[:, 1])])
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    n = len(ends)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    return np.sort(first)


@dataclass
class AtomicCurveCurrent(CrossRatioFn):
    """Weighted closed curve: counts lifts of the axis with one endpoint in each arc.

    The lifts are the axes of g w g^-1 for group elements g up to word length
    ``depth``.  ``stable`` reports whether the set of lifts meeting the
    polygon (when given) no longer changes between depth-1 and depth.
    """

    rep: FuchsianRep
    word: tuple
    weight: float = 1.0
    depth: int = 4
    polygon: FundamentalPolygon | None = None
    lifts: np.ndarray = field(init=False, repr=False)
    stable: bool = field(init=False, default=True)

    nonnegative = True
    symmetric = True
    nu = None

    def __post_init__(self):
        self.word = tuple(self.word)
        self.name = f"curve[{format_word(self.word)}]"
        elements = enumerate_group(self.rep, self.depth)
        lengths = np.array([len(w) for w, _ in elements])
        w = self.rep(self.word)
        att, rep_, _ = mb.axis_and_length(w)
        ends = []
        for _, g in elements:
            ends.append(g.apply_angle([att, rep_]))
        ends = np.array(ends)
        first = _distinct_geodesics(ends)
        self.lifts = ends[first]
        self._lift_len = lengths[first]
        if self.polygon is not None:
            meet = self.meets_polygon()
            inner = meet & (self._lift_len < self.depth)
            # every closed geodesic has a lift through a fundamental domain
            self.stable = bool(meet.any() and inner.sum() == meet.sum())

    def meets_polygon(self, polygon: FundamentalPolygon | None = None) -> np.ndarray:
        poly = polygon or self.polygon
        return _chord_meets_polygon(poly.klein_vertices, self.lifts[:, 0], self.lifts[:, 1])

    def check_depth(self) -> None:
        if not self.stable:
            raise DepthTooSmall(f"lift set of {format_word(self.word)} not stable at depth {self.depth}")

    def polygon_lifts(self) -> np.ndarray:
        """Lifts meeting the polygon."""
        return self.lifts[self.meets_polygon()]

    def endpoints_mass(self, a, b, c, d):
        a, b, c, d = (np.asarray(x, dtype=float) for x in (a, b, c, d))
        p = self.lifts[:, 0]
        q = self.lifts[:, 1]
        shape = np.broadcast(a, b, c, d).shape
        a, b, c, d = (np.broadcast_to(x, shape).ravel() for x in (a, b, c, d))
        out = np.empty(len(a))
        for k in range(len(a)):
            pi = _in_ccw(p, a[k], b[k])
            qi = _in_ccw(q, a[k], b[k])
            pj = _in_ccw(p, c[k], d[k])
            qj = _in_ccw(q, c[k], d[k])
            out[k] = self.weight * np.count_nonzero((pi & qj) | (qi & pj))
        return out.reshape(shape)

    def grid_matrix(self, angles):
        g = np.asarray(angles, dtype=float)
        m = len(g) - 1
        rel = lambda x: np.searchsorted(g - g[0], mb.wrap(x - g[0]), side="right") - 1
        i = rel(self.lifts[:, 0])
        j = rel(self.lifts[:, 1])
        out = np.zeros((m, m))
        sel = i != j
        np.add.at(out, (i[sel], j[sel]), self.weight)
        np.add.at(out, (j[sel], i[sel]), self.weight)
        # touching arcs are not valid boxes
        idx = np.arange(m)
        out[idx, idx] = 0
        out[idx, (idx + 1) % m] = 0
        out[(idx + 1) % m, idx] = 0
        return out


def crossing_count_oracle(c1: AtomicCurveCurrent, c2: AtomicCurveCurrent, polygon: FundamentalPolygon) -> int:
    """Pairs of lifts (h1 of c1, h2 of c2) crossing at a point of the polygon.

    Equals the geometric intersection number of the two closed geodesics
    when both lift sets are complete near the polygon.
    """
    l1 = c1.polygon_lifts() if c1.polygon is not None else c1.lifts[c1.meets_polygon(polygon)]
    l2 = c2.polygon_lifts() if c2.polygon is not None else c2.lifts[c2.meets_polygon(polygon)]
    count = 0
    for p, q in l1:
        for r, s in l2:
            if not mb.links(p, q, r, s):
                continue
            k = mb.chord_intersection_klein(p, q, r, s)
            if polygon.contains_klein(k):
                count += 1
    return int(count * c1.weight * c2.weight)


# ---------------------------------------------------------------------------
# regularity


def _arc_pair_for_mass(x: float, y: float, target: float):
    """Arcs of equal half-width centered at x and y with base Liouville mass ``target``."""
    sep = mb.ccw_distance(x, y)
    half_max = 0.5 * min(sep, mb.TWO_PI - sep) * 0.999

    def f(s):
        return float(mb.liouville_mass_angles(x - s, x + s, y - s, y + s)) - target

    if f(half_max) < 0:
        return None
    s = brentq(lambda t: math.log(max(f(t) + target, 1e-300)) - math.log(target), 1e-15, half_max, xtol=1e-18,
               rtol=1e-14)
    return Arc(x - s, x + s), Arc(y - s, y + s)


def regularity_check(f: CrossRatioFn, base: LiouvilleCurrent | None = None, n_samples: int = 24,
                     scales: tuple = (1e-6, 1e-2), n_scales: int = 9, c1: float = 0.5,
                     centers=None, seed: int = 7) -> tuple[float, float, dict]:
    """Upper-envelope log-log fit of |f(I, J)| against the base Liouville mass L.

    Arc pairs are symmetric about random center pairs (or the given
    ``centers``), sized so that L takes ``n_scales`` geometrically spaced
    values in ``scales``.  Per scale the maximum of |f| over the centers is
    kept; the fitted slope is the regularity exponent and the intercept gives
    c0.  ``report["regular"]`` is False when the envelope does not decay.
    """
    lo, hi = scales
    if not (0 < lo < hi <= c1) or hi / lo < 10 or n_scales < 3:
        raise ScaleRangeTooNarrow(f"scale range {scales} with {n_scales} scales is too narrow")
    base = base or LiouvilleCurrent()
    if base.transport is not None:
        raise ValueError("the base current must be untransported")
    rng = np.random.default_rng(seed)
    if centers is None:
        x = rng.uniform(0, mb.TWO_PI, n_samples)
        y = x + rng.uniform(math.pi / 3, 5 * math.pi / 3, n_samples)
        centers = np.column_stack([x, mb.wrap(y)])
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    targets = np.geomspace(lo, hi, n_scales)
    env, used = [], []
    for L in targets:
        best = 0.0
        for x, y in centers:
            arcs = _arc_pair_for_mass(x, y, L)
            if arcs is None:
                continue
            best = max(best, abs(f(*arcs)))
        env.append(best)
        used.append(L)
    env = np.array(env)
    used = np.array(used)
    report = {"L": used.tolist(), "envelope": env.tolist(), "n_centers": len(centers)}
    pos = env > 0
    if pos.sum() < 3:
        report.update({"regular": False, "reason": "envelope vanishes at most scales"})
        return 0.0, float("nan"), report
    slope, intercept = np.polyfit(np.log(used[pos]), np.log(env[pos]), 1)
    resid = np.log(env[pos]) - (slope * np.log(used[pos]) + intercept)
    c0 = float(np.max(env[pos] / used[pos] ** slope))
    report.update({"slope": float(slope), "intercept": float(intercept), "residuals": resid.tolist(),
                   "regular": bool(slope > 0.5)})
    return float(slope), c0, report
