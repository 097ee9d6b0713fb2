import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from llab import (AtomicCurveCurrent, BumpBeltrami, ConstantBeltrami, FenchelNielsenCoords, GridBeltrami,
                  InfinitesimalLiouville, LiouvilleCurrent, TeichPath, TwistCollarBeltrami, ZeroCrossRatio,
                  beltrami_first_variation, boundary_map, regularity_check)
from llab import moebius as mb
from llab.beltrami import PolygonRule
from llab.crossratio import crossing_count_oracle
from llab.errors import ArcsNotSeparated, DepthTooSmall, DerivativeUnstable, ScaleRangeTooNarrow
from llab.moebius import TWO_PI, Arc

from conftest import symmetric_pair

I0, J0 = Arc(0.3, 1.1), Arc(2.6, 3.9)


@pytest.fixture(scope="module")
def other_fn():
    return FenchelNielsenCoords(2, (2.3, 1.8, 2.1), (0.4, -0.2, 0.3))


@pytest.fixture(scope="module")
def transported(surface, other_fn):
    return LiouvilleCurrent.on(surface, other_fn, depth=8)


@pytest.fixture(scope="module")
def twist_lv(surface, fn2):
    return InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "twist", 0))


def _splits(arc, fractions):
    cuts = sorted(set(fractions))
    pts = [arc.start] + [mb.wrap(arc.start + f * arc.length) for f in cuts] + [arc.end]
    return [Arc(a, b) for a, b in zip(pts, pts[1:])]


split_fractions = st.lists(st.floats(0.05, 0.95), min_size=1, max_size=7, unique=True).filter(
    lambda f: min(np.diff(sorted([0.0] + f + [1.0]))) > 1e-3)


# -- Liouville ---------------------------------------------------------------


def test_liouville_symmetric_configuration():
    I, J = symmetric_pair(1.0)
    assert LiouvilleCurrent()(I, J) == pytest.approx(2 * math.log(math.cosh(0.5)), abs=1e-12)


def test_identity_transport_matches_direct(surface):
    phi = boundary_map(surface.rep, surface.rep, 6, surface.polygon)
    direct = LiouvilleCurrent(surface.rep)
    for mode in ("exact", "linear"):
        moved = LiouvilleCurrent(surface.rep, phi, interpolation=mode)
        assert moved(I0, J0) == pytest.approx(direct(I0, J0), abs=1e-10)


def test_liouville_rejects_touching():
    with pytest.raises(ArcsNotSeparated):
        LiouvilleCurrent()(Arc(0.0, 1.0), Arc(1.0, 2.0))
    with pytest.raises(ArcsNotSeparated):
        LiouvilleCurrent()(Arc(0.0, 1.5), Arc(1.0, 2.0))


def test_transported_equivariance(surface, transported):
    ref = transported(I0, J0)
    for k in (1, -1, 2, -2, 3, -3, 4, -4):
        g = surface.rep((k,))
        gI = Arc(float(g.apply_angle(I0.start)), float(g.apply_angle(I0.end)))
        gJ = Arc(float(g.apply_angle(J0.start)), float(g.apply_angle(J0.end)))
        assert transported(gI, gJ) == pytest.approx(ref, rel=1e-6)


def test_transport_changes_value(transported):
    assert abs(transported(I0, J0) - LiouvilleCurrent()(I0, J0)) > 1e-3


@given(split_fractions, st.booleans())
@settings(max_examples=30)
def test_transported_additivity(transported, fractions, first):
    pieces = _splits(I0 if first else J0, fractions)
    whole = transported(I0, J0)
    total = math.fsum(transported(p, J0) if first else transported(I0, p) for p in pieces)
    assert total == pytest.approx(whole, rel=1e-9)


def test_symmetry(transported, twist_lv):
    assert transported(I0, J0) == pytest.approx(transported(J0, I0), rel=1e-12)
    assert twist_lv(I0, J0) == pytest.approx(twist_lv(J0, I0), rel=1e-9)


def test_grid_matrix_matches_pointwise(transported, twist_lv):
    g = np.linspace(0, TWO_PI, 9)
    for f in (transported, twist_lv):
        m = f.grid_matrix(g)
        assert m[0, 3] == pytest.approx(f(Arc(g[0], g[1]), Arc(g[3], g[4])), rel=1e-9)
        assert m[5, 2] == pytest.approx(f(Arc(g[5], g[6]), Arc(g[2], g[3])), rel=1e-9)
        assert m[1, 2] == 0.0 and m[0, 7] == 0.0


# -- infinitesimal Liouville -------------------------------------------------


def test_constant_path_is_zero(surface, fn2):
    lv = InfinitesimalLiouville(surface, TeichPath.constant(fn2))
    assert lv(I0, J0) == 0.0


def test_reversal_negates(surface, fn2, twist_lv):
    rev = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "twist", 0).reversed())
    v, e = twist_lv.evaluate_with_error(I0, J0)
    assert rev(I0, J0) == pytest.approx(-v, abs=10 * e + 1e-12)


def test_speed_linearity(surface, fn2):
    base = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "length", 1))
    fast = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "length", 1, speed=2.0))
    v, e = base.evaluate_with_error(I0, J0)
    assert fast(I0, J0) == pytest.approx(2 * v, abs=20 * e + 1e-9)


def test_direction_linearity(surface, fn2):
    # derivative along the sum of two coordinate directions is the sum of derivatives
    t = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "twist", 1))
    l = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "length", 0))
    both = InfinitesimalLiouville(surface, TeichPath(fn2, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)))
    assert both(I0, J0) == pytest.approx(t(I0, J0) + l(I0, J0), rel=1e-5)


@given(split_fractions)
@settings(max_examples=10)
def test_infinitesimal_additivity(twist_lv, fractions):
    pieces = _splits(J0, fractions)
    whole = twist_lv(I0, J0)
    assert math.fsum(twist_lv(I0, p) for p in pieces) == pytest.approx(whole, rel=1e-6)


def test_derivative_unstable(surface, fn2):
    lv = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "length", 0), h=0.5, fd_order=2, rtol=1e-6)
    with pytest.raises(DerivativeUnstable):
        lv(I0, J0)


def test_fd_order_validation(surface, fn2):
    with pytest.raises(ValueError):
        InfinitesimalLiouville(surface, TeichPath.constant(fn2), fd_order=3)


# -- atomic currents ---------------------------------------------------------


@pytest.fixture(scope="module")
def curve_a1(surface):
    return AtomicCurveCurrent(surface.rep, (1,), depth=5, polygon=surface.polygon)


def test_atomic_zero_away_from_axes(curve_a1):
    ends = np.sort(np.concatenate([curve_a1.lifts[:, 0], curve_a1.lifts[:, 1]]))
    gaps = np.diff(ends)
    k = np.argsort(gaps)[-2:]
    # two gaps free of any lift endpoint
    I = Arc(ends[k[0]] + 1e-4, ends[k[0] + 1] - 1e-4)
    J = Arc(ends[k[1]] + 1e-4, ends[k[1] + 1] - 1e-4)
    assert curve_a1(I, J) == 0.0


def test_atomic_single_lift(curve_a1):
    p, q = curve_a1.polygon_lifts()[0]
    ends = np.concatenate([curve_a1.lifts[:, 0], curve_a1.lifts[:, 1]])

    def gap(x):
        d = np.abs(mb.wrap(ends - x + math.pi) - math.pi)
        return np.min(d[d > 0])

    e = 0.5 * min(gap(p), gap(q))
    assert curve_a1(Arc(p - e, p + e), Arc(q - e, q + e)) == 1.0
    heavy = AtomicCurveCurrent(curve_a1.rep, (1,), weight=2.5, depth=5)
    assert heavy(Arc(p - e, p + e), Arc(q - e, q + e)) == 2.5


def test_atomic_partition_total(curve_a1):
    # brute-force oracle: count lifts with one endpoint in each of I, J directly
    p, q = curve_a1.polygon_lifts()[0]
    s = 0.45 * abs(mb.wrap(q - p + math.pi) - math.pi)
    I, J = Arc(p - s, p + 0.8 * s), Arc(q - 0.9 * s, q + s)
    brute = sum(1 for p, q in curve_a1.lifts
                if (I.contains(p) and J.contains(q)) or (I.contains(q) and J.contains(p)))
    total = sum(curve_a1(a, b) for a in _splits(I, np.linspace(0.1, 0.9, 9)) for b in _splits(J, np.linspace(0.1, 0.9, 9)))
    assert brute > 0
    assert total == brute


def test_atomic_nonnegative_symmetric(curve_a1):
    g = np.linspace(0, TWO_PI, 33)
    m = curve_a1.grid_matrix(g)
    assert np.all(m >= 0)
    assert np.array_equal(m, m.T)
    assert m[4, 20] == curve_a1(Arc(g[4], g[5]), Arc(g[20], g[21]))


def test_atomic_depth_flag(surface):
    # a far conjugate of a1 needs conjugating words of length 3 to reach the polygon
    far = (2, 2, 2, 1, -2, -2, -2)
    shallow = AtomicCurveCurrent(surface.rep, far, depth=1, polygon=surface.polygon)
    deep = AtomicCurveCurrent(surface.rep, far, depth=5, polygon=surface.polygon)
    deep.check_depth()
    assert not shallow.stable
    with pytest.raises(DepthTooSmall):
        shallow.check_depth()


def test_crossing_counts(surface):
    # a1 meets b1 once; a1 and a2 are disjoint; the separating curve misses a1
    mk = lambda w: AtomicCurveCurrent(surface.rep, w, depth=5, polygon=surface.polygon)
    a1, b1, a2, sep = mk((1,)), mk((2,)), mk((3,)), mk((1, 2, -1, -2))
    assert crossing_count_oracle(a1, b1, surface.polygon) == 1
    assert crossing_count_oracle(a1, a2, surface.polygon) == 0
    assert crossing_count_oracle(a1, sep, surface.polygon) == 0


def test_zero_cross_ratio():
    z = ZeroCrossRatio()
    assert z(I0, J0) == 0.0
    assert not z.grid_matrix(np.linspace(0, TWO_PI, 9)).any()


# -- regularity --------------------------------------------------------------


def test_regularity_liouville():
    nu, c0, rep = regularity_check(LiouvilleCurrent())
    assert nu == pytest.approx(1.0, abs=0.02)
    assert rep["regular"]


def test_regularity_twist(twist_lv):
    nu, c0, rep = regularity_check(twist_lv, n_samples=12)
    assert nu >= 0.9
    assert rep["regular"]


def test_regularity_atomic(curve_a1):
    centers = curve_a1.polygon_lifts()
    nu, c0, rep = regularity_check(curve_a1, centers=centers)
    assert not rep["regular"]


def test_regularity_scale_guard():
    with pytest.raises(ScaleRangeTooNarrow):
        regularity_check(LiouvilleCurrent(), scales=(1e-3, 2e-3))
    with pytest.raises(ScaleRangeTooNarrow):
        regularity_check(LiouvilleCurrent(), scales=(1e-3, 0.9))


# -- Beltrami first variation ------------------------------------------------


def test_polygon_rule_area(surface):
    errs = [abs(PolygonRule.build(surface.polygon, refine=r, order=6).area_hyperbolic() / (4 * math.pi) - 1)
            for r in (1, 2, 3)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-6


def test_beltrami_zero(surface):
    res = beltrami_first_variation(ConstantBeltrami(0j), I0, J0, surface.rep, surface.polygon)
    assert res.value == 0.0


def test_beltrami_linearity(surface):
    mu = BumpBeltrami(center=0.1 + 0.05j, radius=0.4, amplitude=0.05)
    one = beltrami_first_variation(mu, I0, J0, surface.rep, surface.polygon)
    two = beltrami_first_variation(mu.scaled(2.0), I0, J0, surface.rep, surface.polygon)
    assert one.value != 0.0
    assert two.value == pytest.approx(2 * one.value, rel=1e-9)


def test_beltrami_geom_estimate(surface):
    # |value| <= c ||mu|| L |log L| with c of the same size across configurations
    mu = BumpBeltrami(center=0j, radius=0.5, amplitude=0.1)
    cs = []
    for x, y, L in [(0.7, 3.5, 0.3), (2.0, 5.1, 0.05), (4.4, 1.2, 0.01)]:
        I, J = _pair_for_mass(x, y, L)
        res = beltrami_first_variation(mu, I, J, surface.rep, surface.polygon)
        cs.append(abs(res.value) / (mu.sup_norm * L * abs(math.log(L))))
    assert max(cs) < 5.0
    assert max(cs) / max(min(cs), 1e-12) < 50


def _pair_for_mass(x, y, L):
    from llab.crossratio import _arc_pair_for_mass

    return _arc_pair_for_mass(x, y, L)


def test_grid_beltrami_round_trip():
    pts = np.array([0j, 0.5, 0.5j, -0.5, -0.5j])
    vals = np.array([0.1, 0.05j, -0.02, 0.0, 0.03 + 0.01j])
    g = GridBeltrami(pts, vals)
    h = GridBeltrami.from_json(g.to_json())
    z = mb.disk_to_half(np.array([0.1 + 0.1j, 0.9j]))
    assert np.allclose(g.values(z), h.values(z))
    assert h.sup_norm == pytest.approx(0.1)
    assert g.values(mb.disk_to_half(np.array([0j])))[0] == pytest.approx(0.1)
    assert json.loads(g.to_json())["points"][1] == [0.5, 0.0]


def test_twist_collar_sup_norm(surface):
    mu = TwistCollarBeltrami(surface.rep, (1,), surface.polygon, width=0.3)
    rule = PolygonRule.build(surface.polygon, refine=2, order=6)
    assert np.max(np.abs(mu.values(rule.z))) <= mu.sup_norm * (1 + 1e-12)


def test_beltrami_matches_finite_difference(surface, fn2):
    # cross-validation: the collar coefficient realizes the unit twist about a1
    mu = TwistCollarBeltrami(surface.rep, (1,), surface.polygon, width=0.3)
    lv = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "twist", 0))
    I, J = Arc(2.4056864437461014, 2.712436227761026), Arc(1.39104793135385, 1.8139831888326596)
    res = beltrami_first_variation(mu, I, J, surface.rep, surface.polygon)
    fd, fd_err = lv.evaluate_with_error(I, J)
    assert abs(res.value - fd) <= res.error + fd_err
