"""Hyperbolic plane and boundary-circle primitives.

Two models are used side by side.  Boundary points are angles ``theta`` on the
unit circle bounding the Poincaré disk; interior points are complex numbers in
the open unit disk.  Group elements are real 2x2 matrices acting on the upper
half-plane.  The Cayley map ``z = i (1 + w) / (1 - w)`` links the two, so the
disk center corresponds to ``i`` and the boundary angle ``theta`` corresponds
to the real coordinate ``x = -cot(theta / 2)`` (``theta = 0`` is ``oo``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ArcsNotSeparated,
    DegenerateConfiguration,
    DegenerateQuadruple,
    NoIntersection,
    NotHyperbolic,
    PointNotInArc,
)

TWO_PI = 2.0 * math.pi
DET_TOL = 1e-12


def wrap(theta):
    """Reduce angles to [0, 2pi).  The only angle reduction used in llab."""
    t = np.mod(theta, TWO_PI)
    if np.ndim(t) == 0:
        t = float(t)
        return 0.0 if t >= TWO_PI else t
    t[t >= TWO_PI] = 0.0
    return t


def ccw_distance(start, end):
    """Counterclockwise angular distance from ``start`` to ``end`` in [0, 2pi)."""
    return wrap(np.subtract(end, start))


# ---------------------------------------------------------------------------
# model conversions


def theta_to_x(theta):
    """Boundary angle to half-plane coordinate (``inf`` for theta = 0)."""
    theta = wrap(theta)
    with np.errstate(divide="ignore"):
        x = -1.0 / np.tan(np.asarray(theta) / 2.0)
    if np.ndim(x) == 0:
        return math.inf if theta == 0.0 else float(x)
    x[np.asarray(theta) == 0.0] = np.inf
    return x


def x_to_theta(x):
    """Half-plane boundary coordinate (``inf`` allowed) to boundary angle."""
    x = np.asarray(x, dtype=float)
    theta = math.pi + 2.0 * np.arctan(x)
    theta = np.where(np.isinf(x), 0.0, theta)
    return wrap(theta if theta.ndim else float(theta))


def disk_to_half(w):
    return 1j * (1 + w) / (1 - w)


def half_to_disk(z):
    return (z - 1j) / (z + 1j)


def disk_to_klein(w):
    return 2 * w / (1 + np.abs(w) ** 2)


def klein_to_disk(k):
    return k / (1 + np.sqrt(1 - np.abs(k) ** 2))


def hyperbolic_distance_disk(w1, w2):
    """Hyperbolic distance between two disk points."""
    num = 2 * np.abs(w1 - w2) ** 2
    den = (1 - np.abs(w1) ** 2) * (1 - np.abs(w2) ** 2)
    return np.arccosh(1 + num / den)


def disk_automorphism_to_origin(p):
    """Return the function w -> (w - p) / (1 - conj(p) w) moving p to 0."""
    pc = np.conj(p)
    return lambda w: (w - p) / (1 - pc * w)


# ---------------------------------------------------------------------------
# points and arcs


@dataclass(frozen=True)
class PlanePoint:
    """A point of the open unit disk, stored as a complex number."""

    w: complex

    def __post_init__(self):
        if not abs(self.w) < 1.0:
            raise ValueError(f"point {self.w} is not inside the unit disk")

    @classmethod
    def from_half_plane(cls, z: complex) -> "PlanePoint":
        return cls(complex(half_to_disk(complex(z))))

    @property
    def half_plane(self) -> complex:
        return complex(disk_to_half(self.w))

    @property
    def klein(self) -> complex:
        return complex(disk_to_klein(self.w))

    def distance(self, other: "PlanePoint") -> float:
        return float(hyperbolic_distance_disk(self.w, other.w))


ORIGIN = PlanePoint(0j)


@dataclass(frozen=True)
class Arc:
    """Counterclockwise boundary arc from ``start`` to ``end``.

    The default endpoint convention is half-open, ``[start, end)``, so that
    splitting an arc produces a partition.
    """

    start: float
    end: float
    includes_start: bool = True
    includes_end: bool = False

    def __post_init__(self):
        s, e = wrap(self.start), wrap(self.end)
        if s == e:
            raise ValueError("arc endpoints coincide")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)

    @property
    def length(self) -> float:
        return ccw_distance(self.start, self.end)

    def contains(self, theta: float) -> bool:
        off = ccw_distance(self.start, theta)
        if off == 0.0:
            return self.includes_start
        if off == self.length:
            return self.includes_end
        return off < self.length

    def midpoint(self) -> float:
        return wrap(self.start + self.length / 2)

    def split(self, theta: float) -> tuple["Arc", "Arc"]:
        """Split at an interior point; the point goes to the second piece."""
        off = ccw_distance(self.start, theta)
        if not 0.0 < off < self.length:
            raise PointNotInArc(f"{theta} is not interior to {self}")
        return (
            Arc(self.start, theta, self.includes_start, False),
            Arc(theta, self.end, True, self.includes_end),
        )

    def length_at_basepoint(self, base: PlanePoint = ORIGIN) -> float:
        """Visual angle of the arc seen from ``base``."""
        if base.w == 0:
            return self.length
        move = disk_automorphism_to_origin(base.w)
        a = np.angle(move(np.exp(1j * self.start)))
        b = np.angle(move(np.exp(1j * self.end)))
        return ccw_distance(a, b)

    def rotated(self, phi: float) -> "Arc":
        return Arc(self.start + phi, self.end + phi, self.includes_start, self.includes_end)


def arcs_separated(i: Arc, j: Arc) -> bool:
    """True if the closures of the two arcs are disjoint."""
    gap1 = ccw_distance(i.end, j.start)
    gap2 = ccw_distance(j.end, i.start)
    total = i.length + j.length + gap1 + gap2
    return gap1 > 0 and gap2 > 0 and abs(total - TWO_PI) < 1e-9


# ---------------------------------------------------------------------------
# Mobius maps


@dataclass(frozen=True)
class MobiusMap:
    """Element of PSL(2, R) acting on the upper half-plane.

    Entries are normalized to determinant one with the first nonzero entry
    positive, so that ``M`` and ``-M`` are the same object.
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        det = self.a * self.d - self.b * self.c
        if det <= 0:
            raise ValueError(f"determinant {det} is not positive")
        s = math.sqrt(det)
        ent = [self.a / s, self.b / s, self.c / s, self.d / s]
        lead = next(x for x in ent if x != 0.0)
        if lead < 0:
            ent = [-x for x in ent]
        for name, v in zip("abcd", ent):
            object.__setattr__(self, name, float(v))

    @classmethod
    def from_matrix(cls, m) -> "MobiusMap":
        m = np.asarray(m, dtype=float)
        return cls(m[0, 0], m[0, 1], m[1, 0], m[1, 1])

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def translation(cls, length: float) -> "MobiusMap":
        """Translation by ``length`` along the imaginary axis, towards oo."""
        return cls(math.exp(length / 2), 0.0, 0.0, math.exp(-length / 2))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def trace(self) -> float:
        return self.a + self.d

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        return MobiusMap.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.d, -self.b, -self.c, self.a)

    def conjugate_by(self, n: "MobiusMap") -> "MobiusMap":
        """Return N M N^-1."""
        return n @ self @ n.inverse()

    def key(self, digits: int = 9) -> tuple:
        return tuple(round(x, digits) + 0.0 for x in (self.a, self.b, self.c, self.d))

    def close_to(self, other: "MobiusMap", tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= tol)

    def su11(self) -> tuple[complex, complex]:
        """Coefficients (alpha, beta) of the disk action w -> (alpha w + beta) / (conj(beta) w + conj(alpha))."""
        a, b, c, d = self.a, self.b, self.c, self.d
        alpha = ((a + d) + 1j * (b - c)) / 2
        beta = ((a - d) - 1j * (b + c)) / 2
        return alpha, beta

    def apply_half(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def apply_disk(self, w):
        alpha, beta = self.su11()
        return (alpha * w + beta) / (np.conj(beta) * w + np.conj(alpha))

    def apply_angle(self, theta):
        """Boundary action on angles (vectorized)."""
        alpha, beta = self.su11()
        u = np.exp(1j * np.asarray(theta, dtype=float))
        return wrap(np.angle((alpha * u + beta) / (np.conj(beta) * u + np.conj(alpha))))

    def derivative_half(self, z):
        return 1.0 / (self.c * z + self.d) ** 2


def apply_mobius(m: MobiusMap, theta):
    return m.apply_angle(theta)


def mobius_from_three_points(src, dst) -> MobiusMap:
    """Orientation-preserving map sending three boundary angles to three others."""

    def to_std(t1, t2, t3):
        # map x1 -> 0, x2 -> 1, x3 -> oo on the real line (angles converted)
        x = [theta_to_x(t) for t in (t1, t2, t3)]
        if math.isinf(x[0]):
            m = np.array([[0.0, x[2] - x[1]], [-1.0, x[2]]])
        elif math.isinf(x[1]):
            m = np.array([[1.0, -x[0]], [1.0, -x[2]]])
        elif math.isinf(x[2]):
            m = np.array([[-1.0, x[0]], [0.0, x[0] - x[1]]])
        else:
            m = np.array([[x[1] - x[2], -x[0] * (x[1] - x[2])], [x[1] - x[0], -x[2] * (x[1] - x[0])]])
        det = np.linalg.det(m)
        if det <= 0:
            raise DegenerateConfiguration("points are not in counterclockwise order")
        return m / math.sqrt(det)

    m1 = to_std(*src)
    m2 = to_std(*dst)
    return MobiusMap.from_matrix(np.linalg.inv(m2) @ m1)


def axis_and_length(m: MobiusMap) -> tuple[float, float, float]:
    """Attracting and repelling boundary fixed points (angles) and translation length."""
    tr = abs(m.trace)
    if tr <= 2.0:
        raise NotHyperbolic(f"|trace| = {tr} <= 2")
    length = 2.0 * math.acosh(tr / 2.0)
    alpha, beta = m.su11()
    # fixed points of w -> (alpha w + beta)/(conj(beta) w + conj(alpha)) on |w| = 1:
    # conj(beta) w^2 + (conj(alpha) - alpha) w - beta = 0
    bc = np.conj(beta)
    disc = np.sqrt((np.conj(alpha) - alpha) ** 2 + 4 * bc * beta + 0j)
    roots = [(-(np.conj(alpha) - alpha) + disc) / (2 * bc), (-(np.conj(alpha) - alpha) - disc) / (2 * bc)]
    derivs = [abs(1.0 / (bc * r + np.conj(alpha)) ** 2) for r in roots]
    att, rep = (roots[0], roots[1]) if derivs[0] < derivs[1] else (roots[1], roots[0])
    return wrap(float(np.angle(att))), wrap(float(np.angle(rep))), length


# ---------------------------------------------------------------------------
# cross-ratios and the Liouville mass


def classical_cross_ratio_half(a: float, b: float, c: float, d: float) -> float:
    """((a-c)(b-d)) / ((a-d)(b-c)) on half-plane boundary coordinates; ``inf`` allowed."""
    pts = (a, b, c, d)
    finite = [p for p in pts if not math.isinf(p)]
    if len(set(pts)) < 4 or len(finite) < 3:
        raise DegenerateQuadruple(f"points {pts} are not pairwise distinct")
    if math.isinf(a):
        return (b - d) / (b - c)
    if math.isinf(b):
        return (a - c) / (a - d)
    if math.isinf(c):
        return (b - d) / (a - d)
    if math.isinf(d):
        return (a - c) / (b - c)
    return ((a - c) * (b - d)) / ((a - d) * (b - c))


def classical_cross_ratio(a: float, b: float, c: float, d: float) -> float:
    """Cross-ratio of four boundary angles (same value as on half-plane coordinates)."""
    pts = [wrap(x) for x in (a, b, c, d)]
    if len(set(pts)) < 4:
        raise DegenerateQuadruple("coincident points")
    s = [math.sin(x / 2) for x in (a - c, b - d, a - d, b - c)]
    return (s[0] * s[1]) / (s[2] * s[3])


def liouville_mass_gaps(u, v, w):
    """Liouville mass of ([a, b], [c, d]) from the ccw gaps u = b-a, v = c-b, w = d-c.

    Works on arrays.  Uses log1p of (cross-ratio - 1) so tiny masses keep full
    relative precision.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    x = np.sin(u / 2) * np.sin(w / 2) / (np.sin(v / 2) * np.sin((u + v + w) / 2))
    return np.log1p(x)


def liouville_mass_angles(a, b, c, d):
    """Vectorized Liouville mass for arcs [a, b] and [c, d] given by ccw endpoints."""
    u = ccw_distance(a, b)
    v = ccw_distance(b, c)
    w = ccw_distance(c, d)
    return liouville_mass_gaps(u, v, w)


def liouville_box_mass(i: Arc, j: Arc) -> float:
    if not arcs_separated(i, j):
        raise ArcsNotSeparated(f"{i} and {j} do not have disjoint closures")
    return float(liouville_mass_angles(i.start, i.end, j.start, j.end))


# ---------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True)
class Geodesic:
    """Oriented geodesic given by its two boundary endpoints (angles)."""

    start: float
    end: float

    def __post_init__(self):
        object.__setattr__(self, "start", wrap(self.start))
        object.__setattr__(self, "end", wrap(self.end))
        if self.start == self.end:
            raise ValueError("geodesic endpoints coincide")

    @classmethod
    def from_half_plane(cls, x1: float, x2: float) -> "Geodesic":
        return cls(x_to_theta(x1), x_to_theta(x2))

    def reversed(self) -> "Geodesic":
        return Geodesic(self.end, self.start)

    def image(self, m: MobiusMap) -> "Geodesic":
        return Geodesic(*m.apply_angle([self.start, self.end]))


def _strictly_inside(theta, start, end):
    off = ccw_distance(start, theta)
    return (off > 0) & (off < ccw_distance(start, end))


def links(p, q, r, s):
    """Vectorized linking test for geodesics (p, q) and (r, s)."""
    return _strictly_inside(r, p, q) != _strictly_inside(s, p, q)


def geodesics_link(g: Geodesic, h: Geodesic) -> bool:
    if len({g.start, g.end, h.start, h.end}) < 4:
        raise DegenerateConfiguration("geodesics share an endpoint")
    return bool(links(g.start, g.end, h.start, h.end))


def chord_intersection_klein(p, q, r, s):
    """Intersection of the chords (p, q) and (r, s) in the Klein model (vectorized)."""
    P = np.exp(1j * np.asarray(p, dtype=float))
    Q = np.exp(1j * np.asarray(q, dtype=float))
    R = np.exp(1j * np.asarray(r, dtype=float))
    S = np.exp(1j * np.asarray(s, dtype=float))

    def cross(u, v):
        return u.real * v.imag - u.imag * v.real

    d1, d2 = Q - P, S - R
    t = cross(R - P, d2) / cross(d1, d2)
    return P + t * d1


def geodesic_intersection_point(g: Geodesic, h: Geodesic) -> PlanePoint:
    if not geodesics_link(g, h):
        raise NoIntersection("geodesics do not cross")
    k = complex(chord_intersection_klein(g.start, g.end, h.start, h.end))
    return PlanePoint(complex(klein_to_disk(k)))
