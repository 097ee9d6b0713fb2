"""Boxes, double boxes and subdivision schemes over a fundamental domain.

A box is the set of unoriented geodesics with one endpoint in each of two
boundary arcs with disjoint closures.  A double box is an ordered pair of
boxes such that every geodesic of the first crosses every geodesic of the
second.

Subdivision schemes work on a nested family of grids on the circle.  Level n
has 2**n arcs; schemes start at the level of the seed partition (16 arcs,
level 4, by default) and each further level splits every arc in two.  A cell is a
quadruple of grid-arc indices ``(i1, i2, i3, i4)`` with ``i1 <= i2`` and
``i3 <= i4``; the first pair names a (possibly degenerate) box, the second
pair another.  Because the domain is symmetric under swapping the two
geodesics, cells are stored once per unordered pair of boxes, with
``(i1, i2) <= (i3, i4)``.

Classification of a cell relies on a monotonicity property of the Klein
model: moving one endpoint of a chord slides its crossing point with a fixed
second chord monotonically along that second chord.  Every linear function of
the crossing point is therefore extremal at one of the 16 corner quadruples of
a cell, so containment in a convex polygon is decided exactly by the corners.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .errors import ArcsNotSeparated, MemoryBudgetExceeded, SeedCoverageError
from .fuchsian import FundamentalPolygon
from .moebius import TWO_PI, Arc, arcs_separated, ccw_distance, wrap

INSIDE, OUTSIDE, STRADDLES = "Inside", "Outside", "Straddles"
_CODE = {0: OUTSIDE, 1: INSIDE, 2: STRADDLES}
DEFAULT_INSET = 1e-9


# ---------------------------------------------------------------------------
# arc set operations


def _interval_meet(a, b):
    """Meet of intervals given as ((offset, angle, included), (offset, angle, included)); None if empty or a point."""
    lo = a[0] if a[0][0] > b[0][0] else b[0] if b[0][0] > a[0][0] else (a[0][0], a[0][1], a[0][2] and b[0][2])
    hi = a[1] if a[1][0] < b[1][0] else b[1] if b[1][0] < a[1][0] else (a[1][0], a[1][1], a[1][2] and b[1][2])
    if hi[0] <= lo[0]:
        return None
    return lo, hi


def arc_intersection(a: Arc, b: Arc) -> list[Arc]:
    """Intersection of two arcs as a list of at most two arcs (point pieces dropped).

    Positions are offsets from ``a.start`` and the pieces reuse the stored
    endpoint angles, so equal endpoints stay equal.
    """
    ia = ((0.0, a.start, a.includes_start), (a.length, a.end, a.includes_end))
    sb, eb = ccw_distance(a.start, b.start), ccw_distance(a.start, b.end)
    if sb < eb:
        pieces = [((sb, b.start, b.includes_start), (eb, b.end, b.includes_end))]
    else:
        pieces = [((0.0, a.start, True), (eb, b.end, b.includes_end)),
                  ((sb, b.start, b.includes_start), (TWO_PI, a.start, True))]
    out = []
    for piece in pieces:
        m = _interval_meet(ia, piece)
        if m is not None:
            out.append(Arc(m[0][1], m[1][1], m[0][2], m[1][2]))
    return out


def arc_complement(a: Arc) -> Arc:
    return Arc(a.end, a.start, not a.includes_end, not a.includes_start)


def arc_difference(a: Arc, b: Arc) -> list[Arc]:
    return arc_intersection(a, arc_complement(b))


# ---------------------------------------------------------------------------
# boxes and double boxes


@dataclass(frozen=True)
class BoxG:
    """Geodesics with one endpoint in ``I`` and the other in ``J``."""

    I: Arc
    J: Arc

    def __post_init__(self):
        if not arcs_separated(self.I, self.J):
            raise ArcsNotSeparated(f"{self.I} and {self.J} do not have disjoint closures")

    def contains(self, p: float, q: float) -> bool:
        return (self.I.contains(p) and self.J.contains(q)) or (self.I.contains(q) and self.J.contains(p))


@dataclass(frozen=True)
class DoubleBox:
    first: BoxG
    second: BoxG

    def contains(self, g: tuple, h: tuple) -> bool:
        return self.first.contains(*g) and self.second.contains(*h)

    def arcs(self) -> tuple[Arc, Arc, Arc, Arc]:
        return self.first.I, self.first.J, self.second.I, self.second.J


def _fits_in_gap(x: Arc, lo: Arc, hi: Arc) -> bool:
    """True if arc x lies in the open gap running counterclockwise from lo to hi."""
    gap = ccw_distance(lo.end, hi.start)
    a = ccw_distance(lo.end, x.start)
    b = a + x.length
    if b > gap:
        return False
    if a == 0 and lo.includes_end and x.includes_start:
        return False
    if b == gap and hi.includes_start and x.includes_end:
        return False
    return True


def double_box_valid(db: DoubleBox) -> bool:
    """Exact alternating-order test of the four arcs."""
    i1, i2, i3, i4 = db.arcs()
    return (_fits_in_gap(i3, i1, i2) and _fits_in_gap(i4, i2, i1)) or (
        _fits_in_gap(i3, i2, i1) and _fits_in_gap(i4, i1, i2)
    )


def _box_intersection(b: BoxG, c: BoxG) -> list[BoxG]:
    out = []
    for k, l in ((c.I, c.J), (c.J, c.I)):
        for p in arc_intersection(b.I, k):
            for q in arc_intersection(b.J, l):
                out.append(BoxG(p, q))
    return out


def _box_difference(b: BoxG, c: BoxG) -> list[BoxG]:
    """b - c as disjoint boxes with arcs inside those of b."""
    pieces = [b]
    for k, l in ((c.I, c.J), (c.J, c.I)):
        new = []
        for piece in pieces:
            meet_i = arc_intersection(piece.I, k)
            if not meet_i:
                new.append(piece)
                continue
            rest_i = arc_difference(piece.I, k)
            new += [BoxG(p, piece.J) for p in rest_i]
            for p in meet_i:
                new += [BoxG(p, q) for q in arc_difference(piece.J, l)]
        pieces = new
    return pieces


def double_box_intersection(b: DoubleBox, c: DoubleBox) -> list[DoubleBox]:
    """Intersection as a list of disjoint double boxes (empty list if disjoint)."""
    return [DoubleBox(x, y) for x in _box_intersection(b.first, c.first) for y in _box_intersection(b.second, c.second)]


def split_double_box_difference(b: DoubleBox, c: DoubleBox) -> list[DoubleBox]:
    """b - c as a list of pairwise disjoint valid double boxes."""
    if not double_box_intersection(b, c):
        return [b]
    out = [DoubleBox(x, b.second) for x in _box_difference(b.first, c.first)]
    for x in _box_intersection(b.first, c.first):
        out += [DoubleBox(x, y) for y in _box_difference(b.second, c.second)]
    return out


# ---------------------------------------------------------------------------
# the domain of crossing pairs over a fundamental polygon


@dataclass
class DomainOmega:
    """Pairs of crossing geodesics whose crossing point lies in the polygon interior."""

    polygon: FundamentalPolygon
    inset: float = DEFAULT_INSET
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)
    klein_radius: float = field(init=False)

    def __post_init__(self):
        self.normals, self.offsets = self.polygon.halfplanes()
        self.klein_radius = float(np.max(np.abs(self.polygon.klein_vertices)))

    def kernel_args(self) -> tuple:
        kv = self.polygon.klein_vertices
        return (np.ascontiguousarray(self.normals[:, 0]), np.ascontiguousarray(self.normals[:, 1]),
                np.ascontiguousarray(self.offsets), np.ascontiguousarray(kv.real), np.ascontiguousarray(kv.imag),
                float(self.inset))

    def identifier(self) -> str:
        b = self.polygon.base.w
        return f"dirichlet(base={b.real:.12g}{b.imag:+.12g}j, n={len(self.polygon.vertices)}, inset={self.inset:g})"

    def contains_points(self, k) -> np.ndarray:
        """Strict interior test for Klein-model points (no inset)."""
        k = np.asarray(k)
        vals = k.real[..., None] * self.normals[:, 0] + k.imag[..., None] * self.normals[:, 1]
        return np.all(vals < self.offsets, axis=-1)

    def contains_pairs(self, p, q, r, s) -> np.ndarray:
        """Vectorized membership of geodesic pairs ((p, q), (r, s)) in the domain."""
        from .moebius import chord_intersection_klein, links

        p, q, r, s = (np.asarray(x, dtype=float) for x in (p, q, r, s))
        ok = links(p, q, r, s)
        with np.errstate(all="ignore"):
            x = chord_intersection_klein(p, q, r, s)
        return ok & self.contains_points(np.where(ok, x, 2.0))


@dataclass
class BoxDomain:
    """Union of fixed double boxes, classified arc by arc (an empty list is the empty domain)."""

    boxes: list

    def identifier(self) -> str:
        parts = [",".join(f"{a.start:.12g}:{a.end:.12g}" for a in db.arcs()) for db in self.boxes]
        return "boxes[" + ";".join(parts) + "]"

    def contains_pairs(self, p, q, r, s) -> np.ndarray:
        p, q, r, s = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (p, q, r, s))
        hit = np.zeros(p.shape, dtype=bool)
        for k in range(len(p)):
            g, h = (p[k], q[k]), (r[k], s[k])
            hit[k] = any(db.contains(g, h) or db.contains(h, g) for db in self.boxes)
        return hit

    def classify(self, g: np.ndarray, cells: np.ndarray) -> np.ndarray:
        out = np.zeros(len(cells), dtype=np.uint8)
        if not self.boxes or len(cells) == 0:
            return out
        lo, hi = g[:-1], g[1:]

        def state(idx, arc):
            # 1 inside, 0 outside, 2 straddles, per grid arc
            a = ccw_distance(arc.start, lo[idx])
            b = a + (hi[idx] - lo[idx])
            inside = b <= arc.length
            outside = (a >= arc.length) & (b <= TWO_PI)
            return np.where(inside, 1, np.where(outside, 0, 2))

        c = cells
        best = np.zeros(len(c), dtype=np.uint8)
        for db in self.boxes:
            A = db.arcs()
            for i1, i2, i3, i4 in ((0, 1, 2, 3), (2, 3, 0, 1)):
                for swap1 in (False, True):
                    for swap2 in (False, True):
                        x1, x2 = (c[:, 1], c[:, 0]) if swap1 else (c[:, 0], c[:, 1])
                        x3, x4 = (c[:, 3], c[:, 2]) if swap2 else (c[:, 2], c[:, 3])
                        st = np.stack([state(x1, A[i1]), state(x2, A[i2]), state(x3, A[i3]), state(x4, A[i4])])
                        code = np.where(np.all(st == 1, axis=0), 1, np.where(np.any(st == 0, axis=0), 0, 2))
                        best = np.where(code == 1, 1, np.where((code == 2) & (best == 0), 2, best)).astype(np.uint8)
        out[:] = best
        return out


@njit(cache=True)
def _hull_planes(g, i, j, planes, k0):
    """Two half-planes n.x <= c whose intersection with the disk is the hull of arcs i and j."""
    if i == j:
        l1 = 2 * math.pi - (g[i + 1] - g[i])
        m1 = g[i + 1] + l1 / 2
        l2, m2 = l1, m1
    else:
        l1 = g[j] - g[i + 1]
        m1 = g[i + 1] + l1 / 2
        l2 = 2 * math.pi - (g[j + 1] - g[i])
        m2 = g[j + 1] + l2 / 2
    planes[k0, 0], planes[k0, 1], planes[k0, 2] = math.cos(m1), math.sin(m1), math.cos(l1 / 2)
    planes[k0 + 1, 0], planes[k0 + 1, 1], planes[k0 + 1, 2] = math.cos(m2), math.sin(m2), math.cos(l2 / 2)


@njit(cache=True)
def _clipped_empty(vx, vy, planes, margin, bx, by, cx, cy):
    """True if the convex polygon (vx, vy) misses the intersection of the half-planes."""
    n = vx.shape[0]
    for t in range(n):
        bx[t] = vx[t]
        by[t] = vy[t]
    for k in range(planes.shape[0]):
        a, b, c = planes[k, 0], planes[k, 1], planes[k, 2] + margin
        m = 0
        for t in range(n):
            u = (t + 1) % n
            fp = a * bx[t] + b * by[t] - c
            fq = a * bx[u] + b * by[u] - c
            if fp <= 0:
                cx[m] = bx[t]
                cy[m] = by[t]
                m += 1
            if (fp < 0 and fq > 0) or (fp > 0 and fq < 0):
                s = fp / (fp - fq)
                cx[m] = bx[t] + s * (bx[u] - bx[t])
                cy[m] = by[t] + s * (by[u] - by[t])
                m += 1
        if m == 0:
            return True
        n = m
        for t in range(n):
            bx[t] = cx[t]
            by[t] = cy[t]
    return False


@njit(cache=True)
def _classify_kernel(cells, g, cs, sn, nx, ny, c, vx, vy, margin, out):
    nside = nx.shape[0]
    planes = np.empty((4, 3))
    nb = 2 * (vx.shape[0] + 8)
    bx, by, cx, cy = np.empty(nb), np.empty(nb), np.empty(nb), np.empty(nb)
    for t in range(cells.shape[0]):
        i1, i2, i3, i4 = cells[t, 0], cells[t, 1], cells[t, 2], cells[t, 3]
        distinct = i1 != i2 and i3 != i4 and i1 != i3 and i1 != i4 and i2 != i3 and i2 != i4
        alt = (i1 < i3 and i3 < i2 and i2 < i4) or (i3 < i1 and i1 < i4 and i4 < i2)
        if distinct and not alt:
            out[t] = 0
            continue
        # crossing points lie in the intersection of the two arc hulls
        _hull_planes(g, i1, i2, planes, 0)
        _hull_planes(g, i3, i4, planes, 2)
        if _clipped_empty(vx, vy, planes, margin, bx, by, cx, cy):
            out[t] = 0
            continue
        if not alt:
            out[t] = 2
            continue
        inside = True
        for m in range(16):
            a = i1 + (m & 1)
            b = i2 + ((m >> 1) & 1)
            e = i3 + ((m >> 2) & 1)
            f = i4 + ((m >> 3) & 1)
            px, py = cs[a], sn[a]
            d1x, d1y = cs[b] - px, sn[b] - py
            rx, ry = cs[e], sn[e]
            d2x, d2y = cs[f] - rx, sn[f] - ry
            den = d1x * d2y - d1y * d2x
            if den == 0.0:
                inside = False
                break
            tt = ((rx - px) * d2y - (ry - py) * d2x) / den
            x = px + tt * d1x
            y = py + tt * d1y
            for k in range(nside):
                if nx[k] * x + ny[k] * y - c[k] >= -margin:
                    inside = False
                    break
            if not inside:
                break
        out[t] = 1 if inside else 2


@njit(cache=True)
def _children_kernel(cells):
    n = cells.shape[0]
    out = np.empty((16 * n, 4), dtype=np.int32)
    cnt = 0
    b1 = np.empty((4, 2), dtype=np.int32)
    b2 = np.empty((4, 2), dtype=np.int32)
    for t in range(n):
        n1 = _box_children(cells[t, 0], cells[t, 1], b1)
        n2 = _box_children(cells[t, 2], cells[t, 3], b2)
        same = cells[t, 0] == cells[t, 2] and cells[t, 1] == cells[t, 3]
        for u in range(n1):
            for v in range(n2):
                x0, x1, y0, y1 = b1[u, 0], b1[u, 1], b2[v, 0], b2[v, 1]
                if x0 > y0 or (x0 == y0 and x1 > y1):
                    if same:
                        continue
                    x0, x1, y0, y1 = y0, y1, x0, x1
                out[cnt, 0] = x0
                out[cnt, 1] = x1
                out[cnt, 2] = y0
                out[cnt, 3] = y1
                cnt += 1
    return out[:cnt]


@njit(cache=True)
def _box_children(i, j, buf):
    if i == j:
        buf[0, 0], buf[0, 1] = 2 * i, 2 * i
        buf[1, 0], buf[1, 1] = 2 * i, 2 * i + 1
        buf[2, 0], buf[2, 1] = 2 * i + 1, 2 * i + 1
        return 3
    k = 0
    for x in range(2):
        for y in range(2):
            buf[k, 0] = 2 * i + x
            buf[k, 1] = 2 * j + y
            k += 1
    return 4


@njit(cache=True)
def _locate_kernel(angles, g):
    out = np.empty(angles.shape[0], dtype=np.int32)
    m = g.shape[0] - 1
    for t in range(angles.shape[0]):
        x = angles[t]
        while x < g[0]:
            x += 2 * math.pi
        while x >= g[0] + 2 * math.pi:
            x -= 2 * math.pi
        lo, hi = 0, m
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if g[mid] <= x:
                lo = mid
            else:
                hi = mid
        out[t] = lo
    return out


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    """Nested circle partitions; level n has 2**n arcs.

    The seed partition has ``n_seed`` equal arcs starting at ``offset``.  Each
    refinement splits an arc at fraction ``ratio`` of its length.
    """

    n_seed: int = 16
    offset: float = 0.0
    ratio: float = 0.5

    def __post_init__(self):
        if self.n_seed < 2 or self.n_seed & (self.n_seed - 1):
            raise ValueError("n_seed must be a power of two >= 2")

    @property
    def seed_level(self) -> int:
        return self.n_seed.bit_length() - 1

    def size(self, level: int) -> int:
        return 2**level

    def angles(self, level: int) -> np.ndarray:
        """Arc endpoints of a level: size(level)+1 increasing angles spanning 2pi."""
        if level < self.seed_level:
            raise ValueError(f"level {level} is coarser than the seed partition")
        g = self.offset + TWO_PI * np.arange(self.n_seed + 1) / self.n_seed
        for _ in range(level - self.seed_level):
            mid = g[:-1] + self.ratio * np.diff(g)
            new = np.empty(2 * (len(g) - 1) + 1)
            new[0::2] = g
            new[1::2] = mid
            g = new
        return g

    def arc(self, level: int, k: int) -> Arc:
        g = self.angles(level)
        return Arc(g[k], g[k + 1])


def _trig(g: np.ndarray):
    return np.cos(g), np.sin(g)


def classify_cells(om: DomainOmega, grid: GridSpec, level: int, cells: np.ndarray, g=None) -> np.ndarray:
    """Codes 0 (Outside), 1 (Inside), 2 (Straddles) for an array of cells."""
    g = grid.angles(level) if g is None else g
    if isinstance(om, BoxDomain):
        return om.classify(g, np.asarray(cells))
    cs, sn = _trig(g)
    out = np.empty(len(cells), dtype=np.uint8)
    cells = np.ascontiguousarray(cells, dtype=np.int32)
    _classify_kernel(cells, g, cs, sn, *om.kernel_args(), out)
    return out


def omega_classify(om: DomainOmega, db: DoubleBox) -> str:
    """Inside / Outside / Straddles for an arbitrary double box."""
    arcs = db.arcs()
    pts = sorted({(a.start, 0) for a in arcs} | {(a.end, 0) for a in arcs})
    base = pts[0][0]
    ang = sorted({ccw_distance(base, p[0]) for p in pts})
    g = np.array([base + a for a in ang] + [base + TWO_PI])

    def index(a: Arc) -> int:
        s = ccw_distance(base, a.start)
        i = int(np.argmin(np.abs(np.array(ang) - s)))
        if not math.isclose(ccw_distance(g[i], a.end), a.length, abs_tol=1e-15) and not math.isclose(
            g[i] + a.length, g[i + 1], abs_tol=1e-12
        ):
            raise ValueError("arc spans several grid cells")
        return i

    i1, i2, i3, i4 = (index(a) for a in arcs)
    cell = [min(i1, i2), max(i1, i2), min(i3, i4), max(i3, i4)]
    cs, sn = _trig(g)
    out = np.empty(1, dtype=np.uint8)
    _classify_kernel(np.array([cell], dtype=np.int32), g, cs, sn, *om.kernel_args(), out)
    return _CODE[int(out[0])]


# ---------------------------------------------------------------------------
# schemes


def seed_cells(n_seed: int) -> np.ndarray:
    """All level-1 cells in canonical half storage."""
    boxes = [(i, j) for i in range(n_seed) for j in range(i, n_seed)]
    cells = [(a[0], a[1], b[0], b[1]) for ia, a in enumerate(boxes) for b in boxes[ia:]]
    return np.array(cells, dtype=np.int32)


@dataclass
class SubdivisionScheme:
    """Accepted cells per level over a nested grid.

    ``accepted[n - 1]`` holds the level-n cells in half storage; each stored
    cell with boxes (B1, B2) stands for the two double boxes (B1, B2) and
    (B2, B1).
    """

    grid: GridSpec
    depth: int
    accepted: list
    straddling: list  # counts of straddling stored cells per level
    r: float = 0.5
    R: float = 0.5
    d: float = 3.2
    domain_id: str = ""

    def counts(self) -> list[int]:
        """Number of double boxes per level."""
        return [2 * len(a) for a in self.accepted]

    def total_boxes(self) -> int:
        return sum(self.counts())

    def double_boxes(self, level: int) -> list[DoubleBox]:
        g = self.grid.angles(level)
        out = []
        for i1, i2, i3, i4 in self.accepted[level - 1]:
            b1 = BoxG(Arc(g[i1], g[i1 + 1]), Arc(g[i2], g[i2 + 1]))
            b2 = BoxG(Arc(g[i3], g[i3 + 1]), Arc(g[i4], g[i4 + 1]))
            out += [DoubleBox(b1, b2), DoubleBox(b2, b1)]
        return out

    def identifier(self) -> str:
        return (f"grid(n_seed={self.grid.n_seed}, offset={self.grid.offset:.12g}, ratio={self.grid.ratio:g}), "
                f"depth={self.depth}, domain={self.domain_id}")

    def contains_pairs(self, p, q, r, s) -> np.ndarray:
        """Membership of geodesic pairs in the union of accepted double boxes."""
        p, q, r, s = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (p, q, r, s))
        hit = np.zeros(p.shape, dtype=bool)
        for level in range(1, self.depth + 1):
            acc = self.accepted[level - 1]
            if len(acc) == 0:
                continue
            g = self.grid.angles(level)
            m = len(g) - 1
            idx = [_locate_kernel(np.ascontiguousarray(x), g).astype(np.int64) for x in (p, q, r, s)]
            a1, a2 = np.minimum(idx[0], idx[1]), np.maximum(idx[0], idx[1])
            b1, b2 = np.minimum(idx[2], idx[3]), np.maximum(idx[2], idx[3])
            k1 = a1 * m + a2
            k2 = b1 * m + b2
            lo, hi = np.minimum(k1, k2), np.maximum(k1, k2)
            keys = lo * (m * m) + hi
            acc64 = acc.astype(np.int64)
            akeys = np.sort((acc64[:, 0] * m + acc64[:, 1]) * (m * m) + acc64[:, 2] * m + acc64[:, 3])
            pos = np.searchsorted(akeys, keys)
            pos = np.minimum(pos, len(akeys) - 1)
            hit |= akeys[pos] == keys
        return hit

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        dyadic = self.grid.ratio == 0.5
        levels = []
        for n, acc in enumerate(self.accepted, start=1):
            size = self.grid.size(n)
            entry = {"level": n, "grid_size": size, "straddling": int(self.straddling[n - 1])}
            if dyadic:
                entry["cells"] = [[[int(i), size] for i in row] for row in acc]
            else:
                entry["cells"] = acc.tolist()
            levels.append(entry)
        return {
            "grid": {"n_seed": self.grid.n_seed, "offset": self.grid.offset, "ratio": self.grid.ratio},
            "arc_convention": "cell index i denotes the arc [i/size, (i+1)/size) of a full turn past the offset",
            "depth": self.depth,
            "r": self.r,
            "R": self.R,
            "d": self.d,
            "domain": self.domain_id,
            "levels": levels,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubdivisionScheme":
        grid = GridSpec(**data["grid"])
        accepted, straddling = [], []
        for entry in data["levels"]:
            cells = entry["cells"]
            if cells and isinstance(cells[0][0], list):
                size = entry["grid_size"]
                rows = []
                for row in cells:
                    rows.append([int(Fraction(a, b) * size) for a, b in row])
                arr = np.array(rows, dtype=np.int32)
            else:
                arr = np.array(cells, dtype=np.int32).reshape(-1, 4)
            accepted.append(arr.reshape(-1, 4))
            straddling.append(entry["straddling"])
        return cls(grid, data["depth"], accepted, straddling, data["r"], data["R"], data["d"], data["domain"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save_npz(self, path) -> None:
        """Compact binary form (cells as int32 arrays)."""
        meta = {k: v for k, v in self.to_dict().items() if k != "levels"}
        meta["straddling"] = [int(x) for x in self.straddling]
        arrays = {f"level{n}": a for n, a in enumerate(self.accepted, start=1)}
        np.savez_compressed(path, meta=np.array(json.dumps(meta)), **arrays)

    @classmethod
    def load_npz(cls, path) -> "SubdivisionScheme":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            accepted = [z[f"level{n}"] for n in range(1, meta["depth"] + 1)]
        return cls(GridSpec(**meta["grid"]), meta["depth"], accepted, meta["straddling"], meta["r"], meta["R"],
                   meta["d"], meta["domain"])

    def counts_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "grid_size", "double_boxes", "straddling_cells"])
        for n in range(1, self.depth + 1):
            w.writerow([n, self.grid.size(n), 2 * len(self.accepted[n - 1]), 2 * self.straddling[n - 1]])
        return buf.getvalue()


def generate_scheme(
    om: DomainOmega,
    grid: GridSpec | None = None,
    max_depth: int = 8,
    r: float = 0.5,
    R: float = 0.5,
    d: float = 3.2,
    seeds: np.ndarray | None = None,
    chunk: int = 1 << 18,
    budget_mb: float | None = None,
) -> SubdivisionScheme:
    """Level-by-level subdivision: accept Inside cells, refine Straddles cells.

    A refined cell is never Inside, so every accepted cell has a parent that is
    not contained in the domain and distinct accepted cells are disjoint.
    With ``budget_mb`` set, generation stops with MemoryBudgetExceeded before
    a level whose cells (16 children per straddling cell) would not fit.
    """
    if not (0 < r <= 0.5 <= R < 1):
        raise ValueError("need 0 < r <= 1/2 <= R < 1")
    if grid is None:
        grid = GridSpec(ratio=0.5 if r == 0.5 or R == 0.5 else max(r, 1 - R))
    if not (r <= grid.ratio <= R and r <= 1 - grid.ratio <= R):
        raise ValueError("grid split ratio must produce pieces within [r, R] of the parent")
    s0 = grid.seed_level
    if max_depth < s0:
        raise ValueError(f"max_depth {max_depth} is below the seed level {s0}")
    cells = seed_cells(grid.n_seed) if seeds is None else np.asarray(seeds, dtype=np.int32).reshape(-1, 4)
    if seeds is not None:
        _check_seed_coverage(om, grid, cells)
    empty = np.zeros((0, 4), np.int32)
    accepted = [empty] * (s0 - 1)
    straddling = [0] * (s0 - 1)
    parents = [cells]  # list of arrays whose union is the current level's candidates
    first = True
    for level in range(s0, max_depth + 1):
        g = grid.angles(level)
        last = level == max_depth
        acc_parts, next_parts, n_strad = [], [], 0
        for block in parents:
            for start in range(0, len(block), chunk):
                part = block[start : start + chunk]
                cand = part if first else _children_kernel(part)
                codes = classify_cells(om, grid, level, cand, g)
                acc_parts.append(cand[codes == 1])
                strad = cand[codes == 2]
                n_strad += len(strad)
                if not last:
                    next_parts.append(strad)
        first = False
        accepted.append(np.concatenate(acc_parts) if acc_parts else empty)
        straddling.append(n_strad)
        parents = next_parts
        if budget_mb is not None and not last:
            held = sum(a.nbytes for a in accepted) + n_strad * 16
            projected = held + n_strad * 16 * 16 * 2
            if projected > budget_mb * 2**20:
                raise MemoryBudgetExceeded(
                    f"level {level + 1} needs about {projected / 2**20:.0f} MB (budget {budget_mb:g} MB)")
    return SubdivisionScheme(grid, max_depth, accepted, straddling, r, R, d, om.identifier())


def _check_seed_coverage(om: DomainOmega, grid: GridSpec, cells: np.ndarray, samples: int = 20000) -> None:
    rng = np.random.default_rng(12345)
    p, q, r, s = sample_omega_pairs(om, samples, rng)
    g = grid.angles(grid.seed_level)
    idx = [_locate_kernel(x, g) for x in (p, q, r, s)]
    m = len(g) - 1
    a1, a2 = np.minimum(idx[0], idx[1]), np.maximum(idx[0], idx[1])
    b1, b2 = np.minimum(idx[2], idx[3]), np.maximum(idx[2], idx[3])
    k1, k2 = a1 * m + a2, b1 * m + b2
    keys = np.minimum(k1, k2) * m * m + np.maximum(k1, k2)
    c = cells.astype(np.int64)
    ck = (c[:, 0] * m + c[:, 1]) * m * m + c[:, 2] * m + c[:, 3]
    if not np.all(np.isin(keys, ck)):
        raise SeedCoverageError("seed cells miss part of the domain")


def count_profile(s: SubdivisionScheme, first_level: int | None = None) -> tuple[list[int], float]:
    """Per-level double-box counts and the least-squares slope of log(count) vs n log(1/r).

    By default the fit uses the refinement levels only (past the seed
    level): the seed-level count reflects the coarse seed partition rather
    than growth along the frontier.
    """
    counts = s.counts()
    if first_level is None:
        first_level = s.grid.seed_level + 1
    lv = np.array([n for n in range(first_level, s.depth + 1) if counts[n - 1] > 0])
    if len(lv) < 2:
        return counts, float("nan")
    y = np.log([counts[n - 1] for n in lv])
    x = lv * math.log(1 / s.r)
    slope = float(np.polyfit(x, y, 1)[0])
    return counts, slope


def straddle_profile(om: DomainOmega, grid: GridSpec, levels: int) -> list[int]:
    """Number of grid cells meeting the domain frontier at each level (ordered pairs)."""
    s = generate_scheme(om, grid, max_depth=levels)
    return [2 * x for x in s.straddling]


def minkowski_dimension_estimate(om: DomainOmega | None, levels: int = 7, grid: GridSpec | None = None,
                                 counts: list | None = None) -> tuple[float, list[int]]:
    """Box-counting dimension of the frontier: slope of log(straddling cells) vs n log 2.

    ``levels`` is the finest level; the fit uses every level from the seed
    level on with a nonzero count.
    """
    grid = grid or GridSpec()
    if levels - grid.seed_level + 1 < 3 or levels < 4:
        raise ValueError("need at least 4 levels and 3 levels past the seed")
    if counts is None:
        counts = straddle_profile(om, grid, levels)
    lv = [n for n in range(grid.seed_level, levels + 1) if counts[n - 1] > 0]
    if len(lv) < 2:
        return 0.0, counts
    y = np.log([counts[n - 1] for n in lv])
    x = np.array(lv) * math.log(2)
    return float(np.polyfit(x, y, 1)[0]), counts


# ---------------------------------------------------------------------------
# sampling


def sample_omega_pairs(om: DomainOmega, n: int, rng: np.random.Generator):
    """Geodesic pairs drawn from the product Liouville measure restricted to the domain.

    The crossing point is uniform for hyperbolic area on the polygon and the
    two directions have joint density proportional to |sin| of the angle
    between them.
    """
    rk = om.klein_radius
    rp = rk / (1 + math.sqrt(1 - rk * rk))  # Poincaré radius of the bounding disk
    pts = []
    need = n
    while need > 0:
        m = max(4 * need, 1024)
        w = rp * np.sqrt(rng.random(m)) * np.exp(1j * TWO_PI * rng.random(m))
        dens = ((1 - rp**2) / (1 - np.abs(w) ** 2)) ** 2
        keep = rng.random(m) < dens
        w = w[keep]
        k = 2 * w / (1 + np.abs(w) ** 2)
        w = w[om.contains_points(k)]
        pts.append(w[:need])
        need -= len(pts[-1])
    w = np.concatenate(pts)
    dirs = []
    need = n
    while need > 0:
        m = max(4 * need, 1024)
        a, b = rng.random(m) * math.pi, rng.random(m) * math.pi
        keep = rng.random(m) < np.abs(np.sin(a - b))
        dirs.append(np.stack([a[keep], b[keep]], axis=1)[:need])
        need -= len(dirs[-1])
    ab = np.concatenate(dirs)
    p, q = geodesic_through(w, ab[:, 0])
    r, s = geodesic_through(w, ab[:, 1])
    return p, q, r, s


def geodesic_through(w, direction):
    """Endpoints (angles) of the geodesic through disk point w with tangent angle ``direction``."""
    w = np.asarray(w, dtype=complex)
    # move w to the origin, take the diameter, move back
    e1 = np.exp(1j * np.asarray(direction))
    ends = []
    for e in (e1, -e1):
        z = (e + w) / (1 + np.conj(w) * e)
        ends.append(wrap(np.angle(z)))
    return ends[0], ends[1]


def sample_omega_pairs_uniform(om: DomainOmega, n: int, rng: np.random.Generator):
    """Geodesic pairs uniform for Lebesgue measure on angle quadruples, restricted to the domain."""
    out = []
    need = n
    while need > 0:
        m = max(5 * need, 4096)
        p, q, r, s = (rng.random(m) * TWO_PI for _ in range(4))
        keep = om.contains_pairs(p, q, r, s)
        out.append(np.stack([p[keep], q[keep], r[keep], s[keep]])[:, :need])
        need -= out[-1].shape[1]
    return tuple(np.concatenate(out, axis=1))


def mc_coverage(s: SubdivisionScheme, om: DomainOmega, n: int = 100_000, seed: int = 2024,
                measure: str = "lebesgue") -> float:
    """Fraction of the domain covered by accepted boxes.

    ``measure="lebesgue"`` weights pairs by volume in angle coordinates,
    ``measure="liouville"`` by the product Liouville measure.
    """
    rng = np.random.default_rng(seed)
    if measure == "lebesgue":
        p, q, r, t = sample_omega_pairs_uniform(om, n, rng)
    elif measure == "liouville":
        p, q, r, t = sample_omega_pairs(om, n, rng)
    else:
        raise ValueError(f"unknown measure {measure!r}")
    return float(np.mean(s.contains_pairs(p, q, r, t)))
