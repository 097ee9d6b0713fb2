"""Surface-group representations built from Fenchel-Nielsen coordinates.

The surface of genus g is assembled from g one-holed tori glued to a sphere
with g holes (itself a chain of pairs of pants).  Every pair of pants is
realized by two translations whose axes are perpendicular to a common seam,
with the seam length given by the right-angled hexagon formula.  Gluing along a
curve conjugates one piece so that the two boundary elements become inverse,
followed by a translation of the twist amount along the glued axis.

Generators are returned in the order a_1, b_1, ..., a_g, b_g and satisfy
[a_1, b_1] ... [a_g, b_g] = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import moebius as mb
from .errors import (
    BudgetTooSmall,
    EnumerationBudget,
    NotHyperbolic,
    NumericalDegeneracy,
    RepresentationsMismatched,
    ScaleRangeTooNarrow,
)
from .moebius import MobiusMap, PlanePoint

MAX_WORD_LENGTH = 12
RELATION_TOL = 1e-8

Word = tuple  # tuple of nonzero ints: +k is generator k-1, -k its inverse


@dataclass(frozen=True)
class FenchelNielsenCoords:
    """Lengths and twists of a pants decomposition.

    Curve order: the g handle curves alpha_i, then the separating curves
    sigma_i around each handle (a single sigma when g = 2), then the g - 3
    curves delta_k cutting the g-holed sphere into a chain of pants.  Twists
    are in length units.
    """

    genus: int
    lengths: tuple
    twists: tuple

    def __post_init__(self):
        n = 3 * self.genus - 3
        if self.genus < 2:
            raise ValueError("genus must be at least 2")
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "twists", tuple(float(x) for x in self.twists))
        if len(self.lengths) != n or len(self.twists) != n:
            raise ValueError(f"genus {self.genus} needs {n} lengths and {n} twists")
        if min(self.lengths) <= 0:
            raise ValueError("lengths must be positive")

    @classmethod
    def uniform(cls, genus: int = 2, length: float = 2.0, twist: float = 0.0):
        n = 3 * genus - 3
        return cls(genus, (length,) * n, (twist,) * n)

    def with_coordinate(self, kind: str, index: int, value: float) -> "FenchelNielsenCoords":
        vals = list(self.lengths if kind == "length" else self.twists)
        vals[index] = value
        if kind == "length":
            return FenchelNielsenCoords(self.genus, tuple(vals), self.twists)
        return FenchelNielsenCoords(self.genus, self.lengths, tuple(vals))

    def to_dict(self) -> dict:
        return {"genus": self.genus, "lengths": list(self.lengths), "twists": list(self.twists)}

    @classmethod
    def from_dict(cls, d: dict) -> "FenchelNielsenCoords":
        return cls(int(d["genus"]), tuple(d["lengths"]), tuple(d["twists"]))


# ---------------------------------------------------------------------------
# words


def letter_name(k: int) -> str:
    idx = abs(k) - 1
    name = ("a" if idx % 2 == 0 else "b") + str(idx // 2 + 1)
    return name if k > 0 else name.upper()


def format_word(w: Word) -> str:
    return " ".join(letter_name(k) for k in w) if w else "1"


def parse_word(s: str) -> Word:
    out = []
    for tok in s.split():
        if tok == "1":
            continue
        base = tok.lower()
        idx = 2 * (int(base[1:]) - 1) + (0 if base[0] == "a" else 1)
        out.append(idx + 1 if tok[0].islower() else -(idx + 1))
    return tuple(out)


def invert_word(w: Word) -> Word:
    return tuple(-k for k in reversed(w))


def commutator_word(i: int) -> Word:
    """[a_i, b_i] = a_i b_i a_i^-1 b_i^-1 (1-based handle index)."""
    a, b = 2 * i - 1, 2 * i
    return (a, b, -a, -b)


def pants_curve_words(genus: int) -> list[Word]:
    """Words representing the pants curves, in FenchelNielsenCoords order."""
    words = [(2 * i - 1,) for i in range(1, genus + 1)]
    if genus == 2:
        words.append(commutator_word(1))
        return words
    words += [commutator_word(i) for i in range(1, genus + 1)]
    for k in range(1, genus - 2):
        w: tuple = ()
        for i in range(1, k + 2):
            w += commutator_word(i)
        words.append(w)
    return words


# ---------------------------------------------------------------------------
# elementary pieces


def _translation_unit_axis(length: float) -> np.ndarray:
    """Translation by ``length`` along the unit semicircle, from -1 towards +1."""
    c, s = math.cosh(length / 2), math.sinh(length / 2)
    return np.array([[c, s], [s, c]])


def _dilation(dist: float) -> np.ndarray:
    return np.array([[math.exp(dist / 2), 0.0], [0.0, math.exp(-dist / 2)]])


def _seam_length(l1: float, l2: float, l3: float) -> float:
    """Distance between boundary curves 1 and 2 in a pants with these lengths."""
    num = math.cosh(l3 / 2) + math.cosh(l1 / 2) * math.cosh(l2 / 2)
    den = math.sinh(l1 / 2) * math.sinh(l2 / 2)
    val = num / den
    if not math.isfinite(val):
        raise NumericalDegeneracy(f"pants ({l1}, {l2}, {l3}) too extreme for double precision")
    return math.acosh(val)


def _pants_pair(l1: float, l2: float, l3: float) -> tuple[np.ndarray, np.ndarray, float]:
    """X, Y with translation lengths l1, l2 and XY of length l3."""
    dist = _seam_length(l1, l2, l3)
    e = _dilation(dist)
    x = _translation_unit_axis(-l1)
    y = e @ _translation_unit_axis(l2) @ np.linalg.inv(e)
    return x, y, dist


def _fixed_points_half(m: np.ndarray) -> tuple[float, float]:
    """Repelling and attracting fixed points (half-plane coordinates)."""
    m = _sl2_normalize(m)
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    tr = a + d
    if abs(tr) <= 2.0:
        raise NotHyperbolic(f"|trace| = {abs(tr)} <= 2")
    if c == 0.0:
        x = b / (d - a)
        # attracting at infinity when |a| > |d|
        return (x, math.inf) if abs(a) > abs(d) else (math.inf, x)
    # c x^2 + (d - a) x - b = 0, solved without cancellation
    root = math.sqrt(tr * tr - 4.0)
    q = -0.5 * ((d - a) + math.copysign(root, d - a))
    x1, x2 = q / c, -b / q
    # derivative at a fixed point x is 1 / (c x + d)^2
    return (x1, x2) if abs(c * x1 + d) < abs(c * x2 + d) else (x2, x1)


def _to_imaginary_axis(rep: float, att: float) -> np.ndarray:
    """Matrix sending rep -> 0 and att -> oo."""
    if math.isinf(att):
        return np.array([[1.0, -rep], [0.0, 1.0]])
    if math.isinf(rep):
        return np.array([[0.0, -1.0], [1.0, -att]])
    m = np.array([[1.0, -rep], [-1.0, att]]) if att > rep else np.array([[-1.0, rep], [-1.0, att]])
    return m / math.sqrt(np.linalg.det(m))


def _apply(m: np.ndarray, z: complex) -> complex:
    return (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])


def _perpendicular_foot(m_axis: np.ndarray, m_other: np.ndarray) -> complex:
    """Foot on axis(m_axis) of the common perpendicular to axis(m_other)."""
    r, a = _fixed_points_half(m_axis)
    g = _to_imaginary_axis(r, a)
    u, v = (_apply(g, x) if not math.isinf(x) else g[0, 0] / g[1, 0] for x in _fixed_points_half(m_other))
    prod = (u * v).real
    if prod <= 0:
        raise NumericalDegeneracy("axes are not ultraparallel")
    return _apply(np.linalg.inv(g), 1j * math.sqrt(prod))


def _frame(m_axis: np.ndarray, foot: complex) -> np.ndarray:
    """Isometry sending (i, upward imaginary axis) to (foot, direction of m_axis)."""
    r, a = _fixed_points_half(m_axis)
    g = _to_imaginary_axis(r, a)
    y = _apply(g, foot).imag
    s = np.array([[1 / math.sqrt(y), 0.0], [0.0, math.sqrt(y)]])
    return np.linalg.inv(s @ g)


def _side(m_axis: np.ndarray, z: complex) -> int:
    """+1 if z lies to the left of the oriented axis of m_axis, else -1."""
    r, a = _fixed_points_half(m_axis)
    w = _apply(_to_imaginary_axis(r, a), z)
    return 1 if w.real < 0 else -1


@dataclass
class _Boundary:
    element: np.ndarray
    foot: complex
    side: int


@dataclass
class _Piece:
    gens: list  # list of np.ndarray, in final generator order
    boundaries: dict  # name -> _Boundary
    reference: complex

    def conjugate(self, n: np.ndarray) -> None:
        ninv = np.linalg.inv(n)
        self.gens = [n @ g @ ninv for g in self.gens]
        for b in self.boundaries.values():
            b.element = n @ b.element @ ninv
            b.foot = _apply(n, b.foot)
        self.reference = _apply(n, self.reference)


def _torus_piece(length: float, twist: float, boundary_length: float) -> _Piece:
    x, y, dist = _pants_pair(length, length, boundary_length)
    a = x
    b = _dilation(dist) @ _translation_unit_axis(twist)
    c = x @ y  # = [a, b]
    ref = 1j * math.exp(dist / 2)
    foot = _perpendicular_foot(c, x)
    return _Piece([a, b], {"c": _Boundary(c, foot, _side(c, ref))}, ref)


def _pants_piece(l1: float, l2: float, l3: float) -> _Piece:
    x, y, dist = _pants_pair(l1, l2, l3)
    z = np.linalg.inv(x @ y)
    ref = 1j * math.exp(dist / 2)
    bnd = {
        "x": _Boundary(x, _perpendicular_foot(x, y), _side(x, ref)),
        "y": _Boundary(y, _perpendicular_foot(y, z), _side(y, ref)),
        "z": _Boundary(z, _perpendicular_foot(z, x), _side(z, ref)),
    }
    return _Piece([], bnd, ref)


def _glue(fixed: _Boundary, moving_piece: _Piece, moving: _Boundary, twist: float) -> None:
    """Conjugate moving_piece so its boundary matches ``fixed`` from the other side."""
    f_fixed = _frame(fixed.element, fixed.foot)
    f_moving = _frame(moving.element, moving.foot)
    if fixed.side == moving.side:
        flip = np.array([[0.0, 1.0], [-1.0, 0.0]])  # rotation by pi about i
        m0 = f_fixed @ flip @ np.linalg.inv(f_moving)
    else:
        m0 = f_fixed @ np.linalg.inv(f_moving)
    shift = f_fixed @ _dilation(twist) @ np.linalg.inv(f_fixed)
    moving_piece.conjugate(shift @ m0)


def _sl2_normalize(m: np.ndarray) -> np.ndarray:
    return m / math.sqrt(np.linalg.det(m))


@dataclass
class FuchsianRep:
    """Surface-group representation given by 2g generator matrices."""

    generators: list  # list of MobiusMap, order a1, b1, ..., ag, bg
    fn: FenchelNielsenCoords | None = None
    relation_defect: float = field(default=float("nan"))

    def __post_init__(self):
        self.generators = [g if isinstance(g, MobiusMap) else MobiusMap.from_matrix(g) for g in self.generators]
        if len(self.generators) % 2:
            raise ValueError("need an even number of generators")
        self.relation_defect = self._relation_defect()
        self._mats = np.array([g.matrix for g in self.generators])

    @property
    def genus(self) -> int:
        return len(self.generators) // 2

    def _relation_defect(self) -> float:
        prod = np.eye(2)
        for i in range(1, self.genus + 1):
            prod = prod @ self.word_matrix(commutator_word(i))
        return float(min(np.max(np.abs(prod - np.eye(2))), np.max(np.abs(prod + np.eye(2)))))

    def letter_matrix(self, k: int) -> np.ndarray:
        g = self.generators[abs(k) - 1]
        return g.matrix if k > 0 else g.inverse().matrix

    def word_matrix(self, w: Word) -> np.ndarray:
        m = np.eye(2)
        for k in w:
            m = m @ self.letter_matrix(k)
        return m

    def __call__(self, w: Word) -> MobiusMap:
        return MobiusMap.from_matrix(self.word_matrix(w))

    def conjugated(self, n: MobiusMap) -> "FuchsianRep":
        return FuchsianRep([g.conjugate_by(n) for g in self.generators], self.fn)

    def translation_length(self, w: Word) -> float:
        return 2.0 * math.acosh(max(abs(np.trace(self.word_matrix(w))) / 2.0, 1.0))

    def to_dict(self) -> dict:
        return {
            "genus": self.genus,
            "generators": [[g.a, g.b, g.c, g.d] for g in self.generators],
            "relation_defect": self.relation_defect,
            "fn": self.fn.to_dict() if self.fn else None,
        }


def build_rep(fn: FenchelNielsenCoords, normalize: bool = True) -> FuchsianRep:
    """Holonomy of the hyperbolic structure with the given Fenchel-Nielsen coordinates.

    With ``normalize`` the result is conjugated so that the point i (the disk
    center) sits midway between the seams of the first two handles.  Raises
    NumericalDegeneracy when the surface relation cannot be met to 1e-8 in
    double precision (very short separating curves next to long handles).
    """
    g = fn.genus
    ln, tw = fn.lengths, fn.twists
    try:
        if g == 2:
            sig_len = (ln[2], ln[2])
            sig_tw = (tw[2],)
        else:
            sig_len = ln[g : 2 * g]
            sig_tw = tw[g : 2 * g]
        tori = [_torus_piece(ln[i], tw[i], sig_len[i]) for i in range(g)]
        if g == 2:
            # glue in the frame of the separating curve so neither handle sits far from i
            c = tori[0].boundaries["c"]
            tori[0].conjugate(np.linalg.inv(_frame(c.element, c.foot)))
            _glue(tori[0].boundaries["c"], tori[1], tori[1].boundaries["c"], sig_tw[0])
        else:
            deltas_l = ln[2 * g :]
            deltas_t = tw[2 * g :]
            # chain of pants: Q1(s1, s2, d1), Qk(d_{k-1}, s_{k+1}, d_k), Q_{g-2}(d_{g-3}, s_{g-1}, s_g)
            chain = []
            for k in range(g - 2):
                l1 = sig_len[0] if k == 0 else deltas_l[k - 1]
                l2 = sig_len[k + 1]
                l3 = sig_len[g - 1] if k == g - 3 else deltas_l[k]
                chain.append(_pants_piece(l1, l2, l3))
            for k in range(1, g - 2):
                _glue(chain[k - 1].boundaries["z"], chain[k], chain[k].boundaries["x"], deltas_t[k - 1])
            slots = [chain[0].boundaries["x"]] + [chain[k].boundaries["y"] for k in range(g - 2)]
            slots.append(chain[-1].boundaries["z"])
            for i in range(g):
                _glue(slots[i], tori[i], tori[i].boundaries["c"], sig_tw[i])
        gens = []
        for t in tori:
            gens += [_sl2_normalize(m) for m in t.gens]
    except (OverflowError, ValueError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        raise NumericalDegeneracy(str(exc)) from exc
    if not all(np.all(np.isfinite(m)) for m in gens):
        raise NumericalDegeneracy("non-finite generator entries")
    rep = FuchsianRep(gens, fn)
    if normalize:
        rep = rep.conjugated(_normalizer(rep))
        rep.fn = fn
    if not rep.relation_defect <= RELATION_TOL:
        raise NumericalDegeneracy(f"relation defect {rep.relation_defect:.3e} exceeds {RELATION_TOL:g}")
    return rep


def _hyperbolic_midpoint(p: complex, q: complex) -> complex:
    """Midpoint of two half-plane points."""
    pd, qd = mb.half_to_disk(p), mb.half_to_disk(q)
    move = mb.disk_automorphism_to_origin(pd)
    qm = move(qd)
    r = abs(qm)
    if r == 0:
        return p
    mid_m = (qm / r) * math.tanh(math.atanh(r) / 2)
    return mb.disk_to_half((mid_m + pd) / (1 + np.conj(pd) * mid_m))


def _seam_midpoint(rep: FuchsianRep, handle: int) -> complex:
    x = rep.word_matrix((2 * handle - 1,))
    y = rep.word_matrix((2 * handle, -(2 * handle - 1), -2 * handle))  # the other side of alpha_handle
    return _hyperbolic_midpoint(_perpendicular_foot(x, y), _perpendicular_foot(y, x))


def _normalizer(rep: FuchsianRep) -> MobiusMap:
    """Isometry moving the midpoint between the first two handle seams to i.

    Balancing the first two handles keeps generator entries moderate when the
    curve separating them is short.
    """
    zmid = _hyperbolic_midpoint(_seam_midpoint(rep, 1), _seam_midpoint(rep, 2))
    m = np.array([[1.0, -zmid.real], [0.0, zmid.imag]])
    return MobiusMap.from_matrix(m)


# ---------------------------------------------------------------------------
# enumeration


def _orbit_coords(mats: np.ndarray) -> np.ndarray:
    """Coordinates (asinh(x/y), log y) of the orbit point g(i) = x + iy."""
    a, b, c, d = mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0], mats[:, 1, 1]
    return np.stack([np.arcsinh(a * c + b * d), -np.log(c * c + d * d)], axis=1)


def _sl2_inverse(mats: np.ndarray) -> np.ndarray:
    out = np.empty_like(mats)
    out[:, 0, 0], out[:, 1, 1] = mats[:, 1, 1], mats[:, 0, 0]
    out[:, 0, 1], out[:, 1, 0] = -mats[:, 0, 1], -mats[:, 1, 0]
    return out


def _same_element(g: np.ndarray, h: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Row-wise test of g = +-h in PSL(2,R).

    Compares h^-1 g with the identity; in a discrete cocompact group distinct
    elements stay far from this tolerance.
    """
    p = _sl2_inverse(h) @ g
    e = np.eye(2)
    return np.minimum(np.abs(p - e).max(axis=(1, 2)), np.abs(p + e).max(axis=(1, 2))) < tol


class OrbitSet:
    """Deduplicating store of group elements.

    Near neighbours in orbit-point coordinates are found with a k-d tree and
    confirmed by :func:`_same_element`.  Only the last ``window`` accepted
    batches are compared against (None keeps all).
    """

    def __init__(self, window: int | None = None, radius: float = 1e-4):
        self.window = window
        self.radius = radius
        self._batches: list = []

    def add(self, mats: np.ndarray) -> np.ndarray:
        """Mask of the rows of ``mats`` that are new; earlier rows win within a batch."""
        from scipy.spatial import cKDTree

        keep = np.ones(len(mats), dtype=bool)
        if len(mats) == 0:
            return keep
        coords = _orbit_coords(mats)
        tree = cKDTree(coords)
        if self._batches:
            old_c = np.concatenate([c for c, _ in self._batches])
            old_m = np.concatenate([m for _, m in self._batches])
            pairs = tree.sparse_distance_matrix(cKDTree(old_c), self.radius, output_type="ndarray")
            if len(pairs):
                i, j = pairs["i"], pairs["j"]
                keep[i[_same_element(mats[i], old_m[j])]] = False
        pairs = tree.query_pairs(self.radius, output_type="ndarray")
        if len(pairs):
            i, j = pairs[:, 0], pairs[:, 1]
            lo, hi = np.minimum(i, j), np.maximum(i, j)
            keep[hi[_same_element(mats[hi], mats[lo])]] = False
        self._batches.append((coords[keep], mats[keep]))
        if self.window is not None and len(self._batches) > self.window:
            self._batches.pop(0)
        return keep


def enumerate_group(rep: FuchsianRep, max_word_length: int, budget: int = 2_000_000) -> list:
    """All distinct elements given by reduced words of length <= max_word_length.

    Returned as (word, MobiusMap) pairs ordered by word length, then
    lexicographically on the letter encoding; the shortest word is kept for
    each element.
    """
    words, mats = enumerate_group_arrays(rep, max_word_length, budget)
    return [(w, MobiusMap.from_matrix(m)) for w, m in zip(words, mats)]


def enumerate_group_arrays(rep: FuchsianRep, max_word_length: int, budget: int = 2_000_000):
    if max_word_length > MAX_WORD_LENGTH:
        raise EnumerationBudget(f"max_word_length {max_word_length} exceeds {MAX_WORD_LENGTH}")
    letters = [k for i in range(1, len(rep.generators) + 1) for k in (i, -i)]
    letters.sort(key=lambda k: (abs(k), k < 0))
    lmats = {k: rep.letter_matrix(k) for k in letters}
    words = [()]
    mats = [np.eye(2)]
    # in the word metric a new element is at distance n-1, n or n+1 from the identity
    seen = OrbitSet(window=3)
    seen.add(np.eye(2)[None])
    frontier_w = [()]
    frontier_m = np.eye(2)[None]
    for _ in range(max_word_length):
        new_w, new_m = [], []
        for k in letters:
            ok = [i for i, w in enumerate(frontier_w) if not w or w[-1] != -k]
            if not ok:
                continue
            prod = frontier_m[ok] @ lmats[k]
            for i, m in zip(ok, prod):
                new_w.append(frontier_w[i] + (k,))
                new_m.append(m)
        if len(words) + len(new_w) > budget:
            raise EnumerationBudget(f"more than {budget} elements")
        if not new_w:
            break
        order = sorted(range(len(new_w)), key=lambda i: tuple((abs(k), k < 0) for k in new_w[i]))
        arr = np.array(new_m)[order]
        keep = seen.add(arr)
        fw = [new_w[i] for i, k in zip(order, keep) if k]
        fm = arr[keep]
        words += fw
        mats += list(fm)
        frontier_w = fw
        frontier_m = fm
        if not fw:
            break
    return words, np.array(mats)


# ---------------------------------------------------------------------------
# Dirichlet polygons


@dataclass
class FundamentalPolygon:
    """Convex fundamental polygon, stored in disk coordinates.

    ``vertices`` are in counterclockwise order; side ``k`` joins vertex k to
    vertex k+1 and is paired by ``side_pairings[k] = (word, MobiusMap)``, the
    element whose image of the base point lies across that side.
    """

    vertices: np.ndarray  # complex disk coordinates
    side_pairings: list
    base: PlanePoint
    partner: list  # index of the paired side

    @property
    def klein_vertices(self) -> np.ndarray:
        return mb.disk_to_klein(self.vertices)

    def halfplanes(self) -> tuple[np.ndarray, np.ndarray]:
        """Klein-model inequalities n.k < c describing the interior."""
        kv = self.klein_vertices
        p, q = kv, np.roll(kv, -1)
        d = q - p
        normal = -1j * d  # outward normal for counterclockwise order
        normal = normal / np.abs(normal)
        c = (normal.conj() * p).real
        return np.stack([normal.real, normal.imag], axis=1), c

    def interior_angles(self) -> np.ndarray:
        v = self.vertices
        n = len(v)
        out = np.empty(n)
        for k in range(n):
            move = mb.disk_automorphism_to_origin(v[k])
            a = np.angle(move(v[(k + 1) % n]))
            b = np.angle(move(v[(k - 1) % n]))
            out[k] = mb.ccw_distance(a, b)
        return out

    def area(self) -> float:
        n = len(self.vertices)
        return float((n - 2) * math.pi - np.sum(self.interior_angles()))

    def circumradius(self) -> float:
        return float(np.max(mb.hyperbolic_distance_disk(self.base.w, self.vertices)))

    def contains_klein(self, k, margin: float = 0.0):
        n, c = self.halfplanes()
        k = np.asarray(k)
        vals = np.outer(k.real.ravel(), n[:, 0]) + np.outer(k.imag.ravel(), n[:, 1])
        return np.all(vals < c - margin, axis=1).reshape(k.shape)

    def to_dict(self) -> dict:
        return {
            "vertices": [[float(z.real), float(z.imag)] for z in self.vertices],
            "side_words": [format_word(w) for w, _ in self.side_pairings],
            "partner": list(self.partner),
            "base": [self.base.w.real, self.base.w.imag],
            "area": self.area(),
        }


def _clip(poly: list, labels: list, normal: complex, c: float, label) -> tuple[list, list]:
    """Clip a convex polygon by Re(conj(normal) z) <= c.

    ``labels[i]`` names the half-plane supporting the edge from poly[i] to
    poly[i+1]; the new edge receives ``label``.
    """
    out, out_labels = [], []
    n = len(poly)
    f = [(np.conj(normal) * z).real - c for z in poly]
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        fp, fq = f[i], f[(i + 1) % n]
        if fp < 0 and fq > 0:
            out += [p, p + fp / (fp - fq) * (q - p)]
            out_labels += [labels[i], label]
        elif fp <= 0:
            out.append(p)
            out_labels.append(labels[i] if fq <= 0 else label)
        elif fq < 0:
            out.append(p + fp / (fp - fq) * (q - p))
            out_labels.append(labels[i])
    return out, out_labels


def _reduce(w: Word) -> Word:
    out: list = []
    for k in w:
        if out and out[-1] == -k:
            out.pop()
        else:
            out.append(k)
    return tuple(out)


def _clip_by_elements(p: complex, mats: np.ndarray):
    """Intersect Dirichlet half-planes of ``mats`` around p (Klein coordinates centered at p)."""
    a, b = _su11_arrays(mats)
    images = (a * p + b) / (np.conj(b) * p + np.conj(a))
    q = mb.disk_automorphism_to_origin(p)(images)
    r = np.abs(q)
    keep = r > 1e-12
    if np.sum(~keep) != 1:
        raise BudgetTooSmall("base point is fixed by a nontrivial element")
    dist = 2 * np.arctanh(np.minimum(r, 1 - 1e-16))
    idx = np.nonzero(keep)[0]
    idx = idx[np.argsort(dist[idx], kind="stable")]
    poly = [complex(z) for z in (1 - 1j, 1 + 1j, -1 + 1j, -1 - 1j)]
    labels: list = [None] * 4
    for i in idx:
        rad = max(abs(z) for z in poly)
        c = math.tanh(dist[i] / 2)
        if c > rad:
            # this bisector and all later ones miss the current polygon
            if rad < 1 - 1e-12:
                break
            continue
        poly, labels = _clip(poly, labels, q[i] / r[i], c, int(i))
    verts, side_elem = [], []
    for k in range(len(poly)):
        if abs(poly[k] - poly[(k + 1) % len(poly)]) > 1e-10:
            verts.append(poly[k])
            side_elem.append(labels[k])
    return np.array(verts), side_elem


def _su11_arrays(mats: np.ndarray):
    a = ((mats[:, 0, 0] + mats[:, 1, 1]) + 1j * (mats[:, 0, 1] - mats[:, 1, 0])) / 2
    b = ((mats[:, 0, 0] - mats[:, 1, 1]) - 1j * (mats[:, 0, 1] + mats[:, 1, 0])) / 2
    return a, b


def dirichlet_polygon(
    rep: FuchsianRep, base: PlanePoint = mb.ORIGIN, word_budget: int = 3, max_rounds: int = 12
) -> FundamentalPolygon:
    """Dirichlet domain centered at ``base``.

    Starts from all elements of word length <= word_budget and repeatedly adds
    products of pairs of current side elements until every side has a partner
    and the polygon stops changing.
    """
    words, mats = enumerate_group_arrays(rep, word_budget)
    words = list(words)
    known = OrbitSet()
    known.add(mats)
    p = base.w
    prev = None
    for _ in range(max_rounds):
        verts, side_elem = _clip_by_elements(p, mats)
        compact = None not in side_elem and np.max(np.abs(verts)) < 1 - 1e-12
        sides = sorted(set(i for i in side_elem if i is not None))
        paired = compact and all(_inverse_side(mats, sides, i) is not None for i in sides)
        stable = prev is not None and len(prev) == len(verts) and np.allclose(prev, verts, atol=1e-13)
        if paired and stable:
            break
        prev = verts
        new_w, new_m = [], []
        cands = [(invert_word(words[i]), np.linalg.inv(mats[i])) for i in sides]
        cands += [(_reduce(words[i] + words[j]), mats[i] @ mats[j]) for i in sides for j in sides]
        fresh = known.add(np.array([m for _, m in cands]))
        for (w, m), f in zip(cands, fresh):
            if f:
                new_w.append(w)
                new_m.append(m)
        if not new_w and not paired:
            raise BudgetTooSmall("side pairing closure failed" if compact else "polygon not compact")
        if new_w:
            words += new_w
            mats = np.concatenate([mats, np.array(new_m)])
    else:
        raise BudgetTooSmall(f"Dirichlet construction did not stabilize in {max_rounds} rounds")
    nv = len(verts)
    disk = mb.klein_to_disk(verts)
    disk = (disk + p) / (1 + np.conj(p) * disk)
    pairings = [(words[i], MobiusMap.from_matrix(mats[i])) for i in side_elem]
    partner = [side_elem.index(_inverse_side(mats, side_elem, i)) for i in side_elem]
    if nv < 4 or any(partner[partner[k]] != k for k in range(nv)):
        raise BudgetTooSmall("inconsistent side pairing")
    return FundamentalPolygon(disk, pairings, base, partner)


def _inverse_side(mats: np.ndarray, sides, i):
    """The entry of ``sides`` whose element is the inverse of element i, or None."""
    idx = np.asarray(list(sides))
    hit = _same_element(mats[idx], np.repeat(_sl2_inverse(mats[i][None]), len(idx), axis=0))
    return int(idx[np.argmax(hit)]) if hit.any() else None


def _signed_area(poly) -> float:
    s = 0.0
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        s += p.real * q.imag - q.real * p.imag
    return s / 2


def optimal_base_point(rep: FuchsianRep, starts: Sequence[complex] = (0j, 0.3, -0.3, 0.3j, -0.3j)) -> PlanePoint:
    """Base point approximately minimizing the Dirichlet circumradius."""
    from scipy.optimize import minimize

    def radius(x):
        w = complex(x[0], x[1])
        if abs(w) > 0.95:
            return 1e3
        try:
            return dirichlet_polygon(rep, PlanePoint(w), 2).circumradius()
        except BudgetTooSmall:
            return 1e3

    best = None
    for s in starts:
        res = minimize(radius, [s.real, s.imag] if isinstance(s, complex) else [s, 0.0],
                       method="Nelder-Mead", options={"xatol": 1e-5, "fatol": 1e-7})
        if best is None or res.fun < best.fun:
            best = res
    return PlanePoint(complex(best.x[0], best.x[1]))


def centered(rep: FuchsianRep, point: PlanePoint) -> FuchsianRep:
    """Conjugate so that ``point`` becomes the disk center."""
    z = point.half_plane
    n = MobiusMap.from_matrix(np.array([[1.0, -z.real], [0.0, z.imag]]))
    out = rep.conjugated(n)
    out.fn = rep.fn
    return out


# ---------------------------------------------------------------------------
# boundary maps


def _su11(mats: np.ndarray):
    """SU(1,1) coefficients (alpha, beta) of real matrices, vectorized."""
    m = np.asarray(mats, dtype=float)
    a = ((m[..., 0, 0] + m[..., 1, 1]) + 1j * (m[..., 0, 1] - m[..., 1, 0])) / 2
    b = ((m[..., 0, 0] - m[..., 1, 1]) - 1j * (m[..., 0, 1] + m[..., 1, 0])) / 2
    return a, b


def _act(a, b, w):
    return (a * w + b) / (np.conj(b) * w + np.conj(a))


class TileCoder:
    """Follows geodesic rays from the disk center through the tiling by a polygon.

    The polygon must be a fundamental domain of ``rep`` containing the origin.
    For a boundary angle theta the coder produces the sequence of side indices
    crossed by the ray towards theta, i.e. a group element g (a product of
    side pairings) with g(polygon) far out along the ray, together with the
    pulled-back endpoint g^-1(theta).  Any equivariant boundary map then
    satisfies phi(theta) = rho'(g)(phi(g^-1 theta)).
    """

    def __init__(self, rep: FuchsianRep, polygon: FundamentalPolygon):
        if not polygon.contains_klein(0j):
            raise ValueError("polygon must contain the disk center")
        self.rep = rep
        self.polygon = polygon
        self.normals, self.offsets = polygon.halfplanes()
        self.words = [w for w, _ in polygon.side_pairings]
        self._nc = self.normals[:, 0] + 1j * self.normals[:, 1]
        self.side_su11 = self.side_coefficients(rep)
        self._cache: dict = {}

    def side_coefficients(self, rep: FuchsianRep):
        mats = np.array([rep.word_matrix(w) for w in self.words])
        return _su11(mats)

    def code(self, theta, tol: float = 1e-17, max_steps: int = 200):
        """Side sequences (N x steps, -1 padded) and pulled-back angles."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        key = (theta.tobytes(), tol)
        if key in self._cache:
            return self._cache[key]
        n = len(theta)
        x = np.exp(1j * theta)
        p = -x
        a_side, b_side = self.side_su11
        ai, bi = np.conj(a_side), -b_side  # inverses
        # accumulated element g as SU(1,1) coefficients
        ga = np.ones(n, dtype=complex)
        gb = np.zeros(n, dtype=complex)
        seq = []
        active = np.ones(n, dtype=bool)
        for _ in range(max_steps):
            idx = np.nonzero(active)[0]
            if len(idx) == 0:
                break
            d = x[idx] - p[idx]
            nd = (np.conj(self._nc)[None, :] * d[:, None]).real
            npv = (np.conj(self._nc)[None, :] * p[idx][:, None]).real
            with np.errstate(divide="ignore", invalid="ignore"):
                s = np.where(nd > 0, (self.offsets[None, :] - npv) / nd, np.inf)
            k = np.argmin(s, axis=1)
            col = np.full(n, -1, dtype=np.int32)
            col[idx] = k
            seq.append(col)
            p[idx] = _act(ai[k], bi[k], p[idx])
            x[idx] = _act(ai[k], bi[k], x[idx])
            ga_new = ga[idx] * a_side[k] + gb[idx] * np.conj(b_side[k])
            gb_new = ga[idx] * b_side[k] + gb[idx] * np.conj(a_side[k])
            ga[idx], gb[idx] = ga_new, gb_new
            deriv = 1.0 / np.abs(np.conj(gb[idx]) * x[idx] + np.conj(ga[idx])) ** 2
            active[idx[deriv < tol]] = False
            p[idx] /= np.abs(p[idx])
            x[idx] /= np.abs(x[idx])
        if active.any():
            raise BudgetTooSmall("coding did not converge")
        seq_arr = np.array(seq, dtype=np.int32).T if seq else np.zeros((n, 0), np.int32)
        out = (seq_arr, np.angle(x))
        if len(self._cache) >= 32:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = out
        return out

    def evaluate(self, theta, target_su11, tol: float = 1e-17):
        """Equivariant image of theta under the boundary map towards the target side pairings."""
        seq, xb = self.code(theta, tol)
        a_t, b_t = target_su11
        n = len(xb)
        ga = np.ones(n, dtype=complex)
        gb = np.zeros(n, dtype=complex)
        for j in range(seq.shape[1]):
            k = seq[:, j]
            act = k >= 0
            kk = k[act]
            na = ga[act] * a_t[kk] + gb[act] * np.conj(b_t[kk])
            nb = ga[act] * b_t[kk] + gb[act] * np.conj(a_t[kk])
            ga[act], gb[act] = na, nb
        return np.angle(_act(ga, gb, np.exp(1j * xb)))


@dataclass(frozen=True)
class BoundaryMap:
    """Monotone circle map given by samples, with piecewise-linear interpolation.

    ``source`` and ``target`` are angles; ``source`` is strictly increasing in
    [0, 2pi) and ``target`` is its lift, strictly increasing with total
    increase 2pi around the circle.  When built from two representations the
    map also keeps an exact equivariant evaluator (see :meth:`exact`).
    """

    source: np.ndarray
    target: np.ndarray
    discarded: int = 0
    coder: TileCoder | None = field(default=None, compare=False, repr=False)
    target_su11: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def samples(self) -> list:
        return list(zip(self.source.tolist(), mb.wrap(self.target).tolist()))

    def __call__(self, theta):
        return evaluate_boundary_map(self, theta)

    def exact(self, theta):
        """Equivariant evaluation by ray coding; exact up to rounding."""
        if self.coder is None:
            return evaluate_boundary_map(self, theta)
        return mb.wrap(self.coder.evaluate(theta, self.target_su11))

    def max_gap(self) -> float:
        gaps = np.diff(np.concatenate([self.source, [self.source[0] + mb.TWO_PI]]))
        return float(np.max(gaps))

    @classmethod
    def identity(cls, n: int = 16) -> "BoundaryMap":
        s = mb.TWO_PI * np.arange(n) / n
        return cls(s, s.copy())


def evaluate_boundary_map(phi: BoundaryMap, theta):
    """Piecewise-linear interpolation between bracketing samples."""
    th = mb.wrap(np.asarray(theta, dtype=float))
    src = np.concatenate([phi.source[-1:] - mb.TWO_PI, phi.source, phi.source[:1] + mb.TWO_PI])
    tgt = np.concatenate([phi.target[-1:] - mb.TWO_PI, phi.target, phi.target[:1] + mb.TWO_PI])
    out = mb.wrap(np.interp(th, src, tgt))
    return float(out) if np.ndim(out) == 0 else out


def _attracting_fixed_angles(a, b):
    """Attracting fixed points (angles) of hyperbolic SU(1,1) elements, vectorized."""
    # fixed points of w -> (a w + b) / (conj(b) w + conj(a)): conj(b) w^2 + (conj(a) - a) w - b = 0
    bc = np.conj(b)
    disc = np.sqrt((np.conj(a) - a) ** 2 + 4 * bc * b + 0j)
    roots = np.stack([(a - np.conj(a) + disc) / (2 * bc), (a - np.conj(a) - disc) / (2 * bc)])
    deriv = 1.0 / np.abs(bc[None] * roots + np.conj(a)[None]) ** 2
    pick = np.argmin(deriv, axis=0)
    w = roots[pick, np.arange(roots.shape[1])]
    return mb.wrap(np.angle(w))


def boundary_map(rep0: FuchsianRep, rep1: FuchsianRep, depth: int, polygon: FundamentalPolygon | None = None,
                 max_violation: float = 0.01) -> BoundaryMap:
    """Sampled equivariant boundary map from rep0's circle to rep1's circle.

    Samples are attracting fixed points of rep0(w) paired with those of
    rep1(w), for the 2**depth words w obtained by coding the rays towards the
    dyadic angles up to the dyadic resolution, plus all generators and their
    inverses.
    """
    if rep0.genus != rep1.genus:
        raise ValueError("representations of different genus")
    if not 1 <= depth <= 10:
        raise ValueError("depth must be in 1..10")
    polygon = polygon or dirichlet_polygon(rep0)
    coder = TileCoder(rep0, polygon)
    n = 2**depth
    theta = mb.TWO_PI * (np.arange(n) + 0.5) / n
    seq, _ = coder.code(theta, tol=(mb.TWO_PI / n) ** 2 * 1e-2)
    a0s, b0s = coder.side_su11
    t_su = coder.side_coefficients(rep1)
    a1s, b1s = t_su

    def accumulate(a_s, b_s):
        ga = np.ones(n, dtype=complex)
        gb = np.zeros(n, dtype=complex)
        for j in range(seq.shape[1]):
            k = seq[:, j]
            act = k >= 0
            kk = k[act]
            na = ga[act] * a_s[kk] + gb[act] * np.conj(b_s[kk])
            nb = ga[act] * b_s[kk] + gb[act] * np.conj(a_s[kk])
            ga[act], gb[act] = na, nb
        return ga, gb

    ga0, gb0 = accumulate(a0s, b0s)
    ga1, gb1 = accumulate(a1s, b1s)
    gen0 = _su11(np.array([rep0.letter_matrix(k) for i in range(1, 2 * rep0.genus + 1) for k in (i, -i)]))
    gen1 = _su11(np.array([rep1.letter_matrix(k) for i in range(1, 2 * rep1.genus + 1) for k in (i, -i)]))
    src = np.concatenate([_attracting_fixed_angles(ga0, gb0), _attracting_fixed_angles(*gen0)])
    tgt = np.concatenate([_attracting_fixed_angles(ga1, gb1), _attracting_fixed_angles(*gen1)])
    order = np.argsort(src, kind="stable")
    src, tgt = src[order], tgt[order]
    keep = np.concatenate([[True], np.diff(src) > 0])
    src, tgt = src[keep], tgt[keep]
    src, lift, bad = _monotone_lift(src, tgt)
    if bad > max_violation * len(tgt):
        raise RepresentationsMismatched(f"{bad} of {len(tgt)} samples violate monotonicity")
    return BoundaryMap(src, lift, bad, coder, t_su)


def _monotone_lift(src: np.ndarray, tgt: np.ndarray):
    """Lift targets to an increasing sequence, discarding samples that break monotonicity."""
    lift = np.unwrap(tgt)
    # unwrap chooses nearest branches; a monotone map then increases by 2pi overall
    keep = np.ones(len(lift), dtype=bool)
    last = lift[0]
    for i in range(1, len(lift)):
        if lift[i] <= last or lift[i] >= lift[0] + mb.TWO_PI:
            keep[i] = False
        else:
            last = lift[i]
    return src[keep], lift[keep], int(np.sum(~keep))


def equivariance_residual(phi: BoundaryMap, rep0: FuchsianRep, rep1: FuchsianRep, n: int = 2000,
                          seed: int = 11) -> dict:
    """Held-out check of phi(rho0(g) x) = rho1(g) phi(x) using interpolation only.

    Test angles are random, so they avoid the sample points.  For each
    generator and inverse only angles where rho0(g) contracts are used, so the
    residual measures interpolation error rather than its amplification.
    """
    x = np.random.default_rng(seed).uniform(0, mb.TWO_PI, n)
    fx = evaluate_boundary_map(phi, x)
    eps = 1e-7
    res = []
    g = rep0.genus
    for k in list(range(1, 2 * g + 1)) + list(range(-1, -2 * g - 1, -1)):
        m0, m1 = rep0((k,)), rep1((k,))
        gx = m0.apply_angle(x)
        slope = np.abs(mb.wrap(m0.apply_angle(x + eps) - gx + math.pi) - math.pi) / eps
        keep = slope <= 1
        lhs = evaluate_boundary_map(phi, gx[keep])
        rhs = m1.apply_angle(fx[keep])
        res.append(np.abs(mb.wrap(lhs - rhs + math.pi) - math.pi))
    r = np.concatenate(res)
    return {"max": float(np.max(r)), "median": float(np.median(r)), "samples": len(phi.source), "test_points": n}


def holder_exponent_estimate(phi: BoundaryMap, min_samples: int = 1000) -> tuple[float, dict]:
    """Hölder exponent of a sampled circle map from log-log envelopes of gap ratios.

    For each scale k = 1, 2, 4, ... the source and image gaps between samples
    i and i+k are compared; the upper envelope of log(image gap) against
    log(source gap) has slope at least nu and the lower envelope slope at
    most 1/nu.
    """
    n = len(phi.source)
    if n < min_samples:
        raise ScaleRangeTooNarrow(f"{n} samples, need {min_samples}")
    src = np.concatenate([phi.source, phi.source + mb.TWO_PI])
    tgt = np.concatenate([phi.target, phi.target + mb.TWO_PI])
    ks = [2**j for j in range(int(math.log2(n // 8)) + 1)]
    if len(ks) < 3:
        raise ScaleRangeTooNarrow("fewer than three scales")
    ls, up, lo = [], [], []
    for k in ks:
        ds = src[k : k + n] - src[:n]
        dt = tgt[k : k + n] - tgt[:n]
        ratio = np.log(dt) - np.log(ds)
        ls.append(float(np.log(np.median(ds))))
        up.append(float(np.log(np.median(ds)) + np.max(ratio)))
        lo.append(float(np.log(np.median(ds)) + np.min(ratio)))
    s_up = float(np.polyfit(ls, up, 1)[0])
    s_lo = float(np.polyfit(ls, lo, 1)[0])
    nu = min(s_up, 1.0 / s_lo) if s_lo > 0 else s_up
    return nu, {"scales": ls, "upper": up, "lower": lo, "slope_upper": s_up, "slope_lower": s_lo}


# ---------------------------------------------------------------------------
# paths in Teichmüller space


@dataclass(frozen=True)
class TeichPath:
    """Straight line t -> base + t * direction in Fenchel-Nielsen coordinates."""

    base: FenchelNielsenCoords
    d_lengths: tuple
    d_twists: tuple
    h: float = 1e-3
    name: str = ""

    @classmethod
    def coordinate(cls, base: FenchelNielsenCoords, kind: str, index: int, speed: float = 1.0,
                   h: float = 1e-3) -> "TeichPath":
        n = 3 * base.genus - 3
        dl = [0.0] * n
        dt = [0.0] * n
        (dl if kind == "length" else dt)[index] = speed
        return cls(base, tuple(dl), tuple(dt), h, f"{kind}[{index}]x{speed:g}")

    @classmethod
    def constant(cls, base: FenchelNielsenCoords, h: float = 1e-3) -> "TeichPath":
        n = 3 * base.genus - 3
        return cls(base, (0.0,) * n, (0.0,) * n, h, "constant")

    def at(self, t: float) -> FenchelNielsenCoords:
        b = self.base
        return FenchelNielsenCoords(
            b.genus,
            tuple(x + t * v for x, v in zip(b.lengths, self.d_lengths)),
            tuple(x + t * v for x, v in zip(b.twists, self.d_twists)),
        )

    def reversed(self) -> "TeichPath":
        return TeichPath(self.base, tuple(-x for x in self.d_lengths), tuple(-x for x in self.d_twists), self.h,
                         f"-{self.name}")

    def scaled(self, c: float) -> "TeichPath":
        return TeichPath(self.base, tuple(c * x for x in self.d_lengths), tuple(c * x for x in self.d_twists), self.h,
                         f"{c:g}*{self.name}")

    def with_step(self, h: float) -> "TeichPath":
        return TeichPath(self.base, self.d_lengths, self.d_twists, h, self.name)

    @property
    def is_constant(self) -> bool:
        return not any(self.d_lengths) and not any(self.d_twists)

    def to_dict(self) -> dict:
        return {"name": self.name, "d_lengths": list(self.d_lengths), "d_twists": list(self.d_twists), "h": self.h}


# ---------------------------------------------------------------------------
# a base structure with its polygon and coder


class Surface:
    """A base hyperbolic structure in disk coordinates centered at its polygon's base point.

    Bundles the representation, its Dirichlet polygon about the disk center and
    a tile coder, and builds boundary maps from this structure to others.
    """

    def __init__(self, fn: FenchelNielsenCoords, rep: FuchsianRep, polygon: FundamentalPolygon,
                 base: PlanePoint = mb.ORIGIN):
        self.fn = fn
        self.rep = rep
        self.polygon = polygon
        self.base = base
        self.coder = TileCoder(rep, polygon)
        self._maps: dict = {}

    @classmethod
    def build(cls, fn: FenchelNielsenCoords, base="center", word_budget: int = 3) -> "Surface":
        """``base`` is "center", "optimal" or a point of the normalized disk."""
        rep = build_rep(fn)
        if isinstance(base, str):
            if base == "optimal":
                point = optimal_base_point(rep)
            elif base == "center":
                point = mb.ORIGIN
            else:
                raise ValueError(f"unknown base point rule {base!r}")
        else:
            point = base if isinstance(base, PlanePoint) else PlanePoint(complex(base))
        if point.w != 0:
            rep = centered(rep, point)
        return cls(fn, rep, dirichlet_polygon(rep, mb.ORIGIN, word_budget), point)

    def boundary_map(self, target, depth: int = 8) -> BoundaryMap:
        """Boundary map to a representation or Fenchel-Nielsen point (cached per FN point)."""
        key = None
        if isinstance(target, FenchelNielsenCoords):
            key = (target, depth)
            if key in self._maps:
                return self._maps[key]
            target = build_rep(target)
        out = boundary_map(self.rep, target, depth, self.polygon)
        if key is not None:
            if len(self._maps) >= 64:
                self._maps.pop(next(iter(self._maps)))
            self._maps[key] = out
        return out

    def to_dict(self) -> dict:
        return {
            "fn": self.fn.to_dict(),
            "base_point": [self.base.w.real, self.base.w.imag],
            "representation": self.rep.to_dict(),
            "polygon": self.polygon.to_dict(),
        }
