import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from llab import moebius as mb
from llab.boxes import (
    INSIDE,
    OUTSIDE,
    STRADDLES,
    BoxDomain,
    BoxG,
    DoubleBox,
    GridSpec,
    SubdivisionScheme,
    arc_difference,
    arc_intersection,
    classify_cells,
    count_profile,
    double_box_intersection,
    double_box_valid,
    generate_scheme,
    geodesic_through,
    minkowski_dimension_estimate,
    omega_classify,
    seed_cells,
    split_double_box_difference,
)
from llab.errors import MemoryBudgetExceeded, SeedCoverageError
from llab.moebius import TWO_PI, Arc


def arc_around(theta, eps):
    return Arc(mb.wrap(theta - eps), mb.wrap(theta + eps))


def box_around(p, q, r, s, eps):
    return DoubleBox(BoxG(arc_around(p, eps), arc_around(q, eps)), BoxG(arc_around(r, eps), arc_around(s, eps)))


def canon(c):
    a, b = sorted(c[:2]), sorted(c[2:])
    return tuple(a + b) if a <= b else tuple(b + a)


def sample_in(db: DoubleBox, n, rng):
    """Uniform angle quadruples inside the ordered arcs of a double box."""
    out = []
    for a in db.arcs():
        out.append(mb.wrap(a.start + a.length * rng.random(n)))
    return out


def member(db: DoubleBox, p, q, r, s):
    return np.array([db.contains((p[k], q[k]), (r[k], s[k])) for k in range(len(p))])


# ---------------------------------------------------------------------------
# double boxes


def test_alternating_quadruple_is_valid():
    e = 0.05
    db = DoubleBox(BoxG(Arc(0.0, e), Arc(math.pi - e, math.pi)),
                   BoxG(Arc(math.pi / 2 - e, math.pi / 2), Arc(3 * math.pi / 2, 3 * math.pi / 2 + e)))
    assert double_box_valid(db)


def test_box_inside_a_gap_is_invalid():
    db = DoubleBox(BoxG(Arc(0.0, 0.1), Arc(3.0, 3.1)), BoxG(Arc(0.5, 0.6), Arc(1.0, 1.1)))
    assert not double_box_valid(db)


def test_shared_closed_endpoint_is_invalid():
    db = DoubleBox(BoxG(Arc(0.0, 0.5, True, True), Arc(3.0, 3.1)), BoxG(Arc(0.5, 0.6, True, True), Arc(4.0, 4.1)))
    assert not double_box_valid(db)
    ok = DoubleBox(BoxG(Arc(0.0, 0.5, True, False), Arc(3.0, 3.1)), BoxG(Arc(0.5, 0.6, True, True), Arc(4.0, 4.1)))
    assert double_box_valid(ok)


def test_valid_double_box_links_every_sample():
    rng = np.random.default_rng(0)
    db = box_around(0.3, 2.9, 1.5, 4.4, 0.2)
    assert double_box_valid(db)
    p, q, r, s = sample_in(db, 2000, rng)
    assert np.all(mb.links(p, q, r, s))


quad = st.lists(st.floats(0.0, TWO_PI, exclude_max=True), min_size=4, max_size=4, unique=True)


@given(quad, st.floats(0.001, 0.2), st.floats(-10.0, 10.0))
def test_validity_rotation_invariant(pts, eps, phi):
    gaps = np.diff(sorted(pts) + [sorted(pts)[0] + TWO_PI])
    if gaps.min() < 2.5 * eps:
        return
    db = box_around(*pts, eps)
    rot = DoubleBox(*(BoxG(b.I.rotated(phi), b.J.rotated(phi)) for b in (db.first, db.second)))
    assert double_box_valid(db) == double_box_valid(rot)
    assert double_box_valid(db) == bool(mb.links(*pts))


def test_arc_set_operations_partition():
    a, b = Arc(5.5, 1.0), Arc(0.5, 2.0)
    meet = arc_intersection(a, b)
    rest = arc_difference(a, b)
    assert sum(x.length for x in meet) + sum(x.length for x in rest) == pytest.approx(a.length, abs=1e-14)
    for t in np.linspace(0, TWO_PI, 997, endpoint=False):
        ins = sum(x.contains(t) for x in meet) + sum(x.contains(t) for x in rest)
        assert ins == int(a.contains(t))


# ---------------------------------------------------------------------------
# splitting


def test_split_disjoint_returns_b():
    b = box_around(0.3, 2.9, 1.5, 4.4, 0.1)
    c = box_around(0.9, 3.5, 2.0, 5.0, 0.1)
    assert double_box_intersection(b, c) == []
    assert split_double_box_difference(b, c) == [b]


def test_split_self_is_empty():
    b = box_around(0.3, 2.9, 1.5, 4.4, 0.1)
    assert split_double_box_difference(b, b) == []


def random_double_box(rng, around=None):
    while True:
        pts = rng.random(4) * TWO_PI if around is None else np.array(around) + rng.normal(0, 0.08, 4)
        eps = rng.uniform(0.05, 0.25)
        if np.diff(sorted(mb.wrap(pts)) + [sorted(mb.wrap(pts))[0] + TWO_PI]).min() < 2.5 * eps:
            continue
        if not mb.links(*pts):
            continue
        return box_around(*pts, eps)


@pytest.mark.parametrize("seed", range(4))
def test_split_difference_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    center = rng.random(4) * TWO_PI
    while not mb.links(*center) or np.diff(sorted(center) + [sorted(center)[0] + TWO_PI]).min() < 0.8:
        center = rng.random(4) * TWO_PI
    b = random_double_box(rng, center)
    c = random_double_box(rng, center)
    while not double_box_intersection(b, c):
        c = random_double_box(rng, center)
    pieces = split_double_box_difference(b, c)
    meet = double_box_intersection(b, c)
    assert all(double_box_valid(x) for x in pieces + meet)
    # pairs drawn from an enlarged box so that both members and non-members appear
    big = DoubleBox(*(BoxG(arc_around(a.midpoint(), 0.5), arc_around(bb.midpoint(), 0.5))
                      for a, bb in ((b.first.I, b.first.J), (b.second.I, b.second.J))))
    parts = [sample_in(big, 6000, rng), sample_in(b, 2000, rng), sample_in(meet[0], 2000, rng)]
    p, q, r, s = (np.concatenate(x) for x in zip(*parts))
    in_b, in_c = member(b, p, q, r, s), member(c, p, q, r, s)
    hits = np.sum([member(x, p, q, r, s) for x in pieces], axis=0)
    assert np.all(hits <= 1)
    assert np.array_equal(hits == 1, in_b & ~in_c)
    inter = np.sum([member(x, p, q, r, s) for x in meet], axis=0)
    assert np.all(inter <= 1)
    assert np.array_equal(inter == 1, in_b & in_c)
    assert (in_b & in_c).any() and (in_b & ~in_c).any()


# ---------------------------------------------------------------------------
# classification


def pair_through(w, a1=0.4, a2=1.9):
    p, q = geodesic_through(w, a1)
    r, s = geodesic_through(w, a2)
    return float(p), float(q), float(r), float(s)


def test_tiny_box_at_center_is_inside(omega):
    pts = pair_through(omega.polygon.base.w)
    assert omega_classify(omega, box_around(*pts, 1e-4)) == INSIDE


def test_box_in_translate_is_outside(omega):
    for _, g in omega.polygon.side_pairings[:4]:
        w = g.apply_disk(omega.polygon.base.w)
        pts = pair_through(w)
        assert omega_classify(omega, box_around(*pts, 1e-5)) == OUTSIDE


@pytest.mark.parametrize("where", ["vertex", "side"])
def test_nested_boxes_on_frontier_straddle(omega, where):
    v = omega.polygon.vertices
    if where == "vertex":
        w = v[0]
    else:
        k = mb.disk_to_klein(np.array([v[0], v[1]]))
        w = complex(mb.klein_to_disk(0.5 * (k[0] + k[1])))
    pts = pair_through(w)
    for j in range(5, 20):
        assert omega_classify(omega, box_around(*pts, 2.0**-j)) == STRADDLES


def test_classify_cells_matches_omega_classify(omega):
    grid = GridSpec()
    g = grid.angles(5)
    rng = np.random.default_rng(3)
    cells = np.sort(rng.integers(0, 32, size=(200, 4)).reshape(-1, 2, 2), axis=2).reshape(-1, 4)
    codes = classify_cells(omega, grid, 5, cells)
    names = {0: OUTSIDE, 1: INSIDE, 2: STRADDLES}
    checked = 0
    for c, code in zip(cells, codes):
        if len(set(c.tolist())) < 4:
            continue
        arcs = [Arc(g[i], g[i + 1]) for i in c]
        try:
            db = DoubleBox(BoxG(arcs[0], arcs[1]), BoxG(arcs[2], arcs[3]))
        except Exception:
            continue
        assert omega_classify(omega, db) == names[int(code)]
        checked += 1
    assert checked > 50


def test_inside_cells_are_conservative(omega, scheme6):
    """No sampled pair of an accepted box meets outside the closed polygon."""
    rng = np.random.default_rng(11)
    n = 100_000
    total = 0
    for level in range(4, 7):
        acc = scheme6.accepted[level - 1]
        if len(acc) == 0:
            continue
        g = scheme6.grid.angles(level)
        pick = acc[rng.integers(0, len(acc), n // 3 + 1)]
        ang = [g[pick[:, k]] + (g[pick[:, k] + 1] - g[pick[:, k]]) * rng.random(len(pick)) for k in range(4)]
        ok = mb.links(*ang)
        assert np.all(ok)
        k = mb.chord_intersection_klein(*ang)
        vals = k.real[:, None] * omega.normals[:, 0] + k.imag[:, None] * omega.normals[:, 1]
        assert np.all(vals <= omega.offsets)
        total += len(pick)
    assert total >= n


# ---------------------------------------------------------------------------
# schemes


def test_refinement_partitions_arcs():
    for grid in (GridSpec(), GridSpec(ratio=0.4, offset=0.3)):
        for n in range(4, 9):
            a, b = grid.angles(n), grid.angles(n + 1)
            assert np.array_equal(b[0::2], a)
            assert np.all(np.diff(b) > 0)
            assert b[-1] - b[0] == pytest.approx(TWO_PI, abs=1e-12)
            for k in range(len(a) - 1):
                left, right = Arc(b[2 * k], b[2 * k + 1]), Arc(b[2 * k + 1], b[2 * k + 2])
                assert left.length + right.length == pytest.approx(a[k + 1] - a[k], abs=1e-15)
                assert left.includes_start and not left.includes_end and right.includes_start


def test_arc_lengths_within_powers():
    grid = GridSpec(ratio=0.4)
    r, R = 0.4, 0.6
    lo, hi = [], []
    for n in range(4, 13):
        d = np.diff(grid.angles(n))
        lo.append(d.min() / r**n)
        hi.append(d.max() / R**n)
    assert max(lo) / min(lo) < 1.0 + 1e-9
    assert max(hi) / min(hi) < 1.0 + 1e-9


def test_scheme_rejects_bad_parameters(omega):
    with pytest.raises(ValueError):
        generate_scheme(omega, max_depth=5, r=0.6, R=0.7)
    with pytest.raises(ValueError):
        generate_scheme(omega, max_depth=3)
    with pytest.raises(ValueError):
        GridSpec(n_seed=12)


def test_scheme_disjoint_exhaustive(scheme6):
    """Distinct cells at any two levels never nest (nested grids make this exact)."""
    seen = {}
    for level in range(1, scheme6.depth + 1):
        acc = scheme6.accepted[level - 1]
        keys = {canon(c.tolist()) for c in acc}
        assert len(keys) == len(acc)
        for key in keys:
            for back in range(1, level - scheme6.grid.seed_level + 1):
                anc = canon([i >> back for i in key])
                assert anc not in seen.get(level - back, set())
        seen[level] = keys


def test_scheme_disjoint_geometric_sample(scheme6):
    rng = np.random.default_rng(5)
    boxes = []
    for level in range(4, 7):
        bx = scheme6.double_boxes(level)
        boxes += [bx[k] for k in rng.choice(len(bx), size=min(60, len(bx)), replace=False)]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert double_box_intersection(boxes[i], boxes[j]) == []


def test_parent_rule(omega, scheme6):
    grid = scheme6.grid
    for level in range(grid.seed_level + 1, scheme6.depth + 1):
        acc = scheme6.accepted[level - 1]
        parents = np.unique(acc >> 1, axis=0)
        codes = classify_cells(omega, grid, level - 1, parents)
        assert not np.any(codes == 1)


def test_accepted_boxes_near_complement(omega, scheme6):
    """Each accepted level-n cell lies within a bounded multiple of 2^-n of the domain's complement."""
    rng = np.random.default_rng(7)
    ratios = []
    for level in range(4, 7):
        g = scheme6.grid.angles(level)
        h = TWO_PI / 2**level
        acc = scheme6.accepted[level - 1]
        worst = 0.0
        for c in acc[rng.choice(len(acc), size=min(40, len(acc)), replace=False)]:
            center = 0.5 * (g[c] + g[c + 1])
            pts = center + h * rng.uniform(-3, 3, size=(20000, 4))
            out = ~omega.contains_pairs(*mb.wrap(pts).T)
            assert out.any()
            worst = max(worst, np.min(np.linalg.norm(pts[out] - center, axis=1)) / h)
        ratios.append(worst)
    assert max(ratios) < 3.0


def test_count_profile_single_level(omega):
    s = generate_scheme(omega, max_depth=4)
    codes = classify_cells(omega, s.grid, 4, seed_cells(16))
    counts, slope = count_profile(s)
    assert counts[3] == 2 * int(np.sum(codes == 1))
    assert math.isnan(slope)


def test_count_profile_box_domain():
    db = box_around(0.2, 2.7, 1.3, 4.1, 0.37)
    s = generate_scheme(BoxDomain([db]), max_depth=9)
    counts, slope = count_profile(s)
    assert all(c > 0 for c in counts[4:])
    assert slope <= 3.3


def test_seed_coverage_error(omega):
    cells = seed_cells(16)[:100]
    with pytest.raises(SeedCoverageError):
        generate_scheme(omega, max_depth=5, seeds=cells)


def test_memory_budget(omega):
    with pytest.raises(MemoryBudgetExceeded):
        generate_scheme(omega, max_depth=8, budget_mb=1.0)


# ---------------------------------------------------------------------------
# frontier dimension


def test_box_domain_frontier_dimension():
    db = box_around(0.2, 2.7, 1.3, 4.1, 0.37)
    d, counts = minkowski_dimension_estimate(BoxDomain([db]), levels=9)
    assert d == pytest.approx(3.0, abs=0.15)


def test_empty_domain_has_no_frontier():
    d, counts = minkowski_dimension_estimate(BoxDomain([]), levels=6)
    assert counts == [0] * 6
    assert d == 0.0


def test_minkowski_needs_levels(omega):
    with pytest.raises(ValueError):
        minkowski_dimension_estimate(omega, levels=5)


# ---------------------------------------------------------------------------
# serialization


def test_json_round_trip(scheme6):
    data = json.loads(scheme6.to_json())
    cell = data["levels"][5]["cells"][0]
    assert all(len(x) == 2 and x[1] == 64 for x in cell)
    back = SubdivisionScheme.from_dict(data)
    assert back.counts() == scheme6.counts()
    for a, b in zip(back.accepted, scheme6.accepted):
        assert np.array_equal(a, b)
    assert back.identifier() == scheme6.identifier()


def test_npz_round_trip(scheme6, tmp_path):
    path = tmp_path / "s.npz"
    scheme6.save_npz(path)
    back = SubdivisionScheme.load_npz(path)
    assert back.straddling == scheme6.straddling
    for a, b in zip(back.accepted, scheme6.accepted):
        assert np.array_equal(a, b)


def test_counts_csv(scheme6):
    rows = list(io.StringIO(scheme6.counts_csv()))
    assert rows[0].strip() == "level,grid_size,double_boxes,straddling_cells"
    assert len(rows) == 7
    assert rows[-1].split(",")[2] == str(scheme6.counts()[5])


def test_membership_matches_boxes(scheme6):
    rng = np.random.default_rng(9)
    bx = scheme6.double_boxes(6)
    db = bx[rng.integers(len(bx))]
    p, q, r, s = sample_in(db, 200, rng)
    assert np.all(scheme6.contains_pairs(p, q, r, s))
    assert np.all(scheme6.contains_pairs(r, s, p, q))
