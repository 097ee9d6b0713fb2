import json
import math

import numpy as np
import pytest

from llab import moebius as mb
from llab import DomainOmega, PlanePoint, generate_scheme
from llab.crossratio import AtomicCurveCurrent, LiouvilleCurrent, ZeroCrossRatio
from llab.errors import RegularityInsufficient, TailDiverges
from llab.fuchsian import TeichPath, dirichlet_polygon
from llab.intersection import (
    LevelStats,
    classical_intersection,
    domain_independence_test,
    intersect,
    level_sum,
    mixed_partial,
    pairing_gram,
    partial_sum_envelope,
    regularity_threshold,
    scheme_independence_test,
    tail_bound,
    tail_ratio,
)


@pytest.fixture(scope="module")
def liouville(surface):
    return LiouvilleCurrent.on(surface, None, 6)


@pytest.fixture(scope="module")
def ll_report(liouville, scheme6):
    return intersect(liouville, liouville, scheme6)


@pytest.fixture(scope="module")
def paths(fn2):
    return {
        "twist0": TeichPath.coordinate(fn2, "twist", 0),
        "length0": TeichPath.coordinate(fn2, "length", 0),
        "twist2": TeichPath.coordinate(fn2, "twist", 2),
    }


# ---------------------------------------------------------------------------
# summation


def test_zero_functional(liouville, scheme6):
    rep = intersect(liouville, ZeroCrossRatio(), scheme6, nu=0.9)
    assert rep.value == 0.0
    assert rep.tail_bound == 0.0
    assert all(s.partial == 0.0 for s in rep.per_level)


def test_bilinearity_exact(liouville, scheme6, ll_report):
    doubled = intersect(liouville * 2.0, liouville, scheme6)
    assert doubled.value == 2.0 * ll_report.value
    both = intersect(liouville * 2.0, liouville * 0.5, scheme6)
    assert both.value == ll_report.value


def test_value_is_sum_of_partials(ll_report):
    assert ll_report.value == math.fsum(s.partial for s in ll_report.per_level)
    assert ll_report.partial_values()[-1] == ll_report.value


def test_counts_match_scheme(ll_report, scheme6):
    assert [s.count for s in ll_report.per_level] == scheme6.counts()


def test_liouville_partials_nonnegative(ll_report):
    assert all(s.partial >= 0 for s in ll_report.per_level)
    acc = ll_report.partial_values()
    assert all(b >= a for a, b in zip(acc, acc[1:]))


def test_workers_bit_identical(liouville, scheme6, ll_report):
    assert len(scheme6.accepted[5]) > 65536  # more than one summation block
    ref = ll_report.to_json()
    for w in (4, 8):
        assert intersect(liouville, liouville, scheme6, workers=w).to_json() == ref


def test_level_sum_thread_independent():
    rng = np.random.default_rng(0)
    m = 256
    A = rng.normal(size=(m, m)) * 10.0 ** rng.integers(-8, 8, size=(m, m))
    B = rng.normal(size=(m, m))
    cells = rng.integers(0, m, size=(500_000, 4)).astype(np.int32)
    ref = level_sum(cells, A, B, 1)
    for w in (2, 3, 8):
        assert level_sum(cells, A, B, w) == ref
    exact = math.fsum((A[cells[:, 0], cells[:, 1]] * B[cells[:, 2], cells[:, 3]]).tolist()
                      + (A[cells[:, 2], cells[:, 3]] * B[cells[:, 0], cells[:, 1]]).tolist())
    assert ref[0] == pytest.approx(exact, rel=1e-13, abs=1e-13 * np.abs(A).max())


def test_report_serialization(ll_report):
    data = json.loads(ll_report.to_json())
    assert data["value"] == ll_report.value
    assert data["parameters"] == {"r": 0.5, "R": 0.5, "d": 3.2, "nu": 1.0, "depth": 6}
    rows = ll_report.per_level_csv().strip().split("\n")
    assert rows[0] == "level,count,partial_sum,accumulated,max_abs_box"
    assert float(rows[-1].split(",")[3]) == ll_report.value


# ---------------------------------------------------------------------------
# tails and certification


def test_tail_ratio_value():
    assert tail_ratio(0.9, 0.5, 0.5, 3.0) == pytest.approx(2 ** -0.6, rel=1e-14)
    assert tail_ratio(0.9, 0.5, 0.5, 3.0) == pytest.approx(0.6598, abs=5e-5)


def test_tail_diverges_at_threshold():
    stats = [LevelStats(n, 2 ** (3 * n), 1.0, 2.0 ** (-3 * n)) for n in range(1, 7)]
    with pytest.raises(TailDiverges):
        tail_bound(stats, 0.75, 0.5, 0.5, 3.0)


def test_tail_geometric_and_decreasing():
    q = 2 ** -0.6
    stats = [LevelStats(n, round(5 * 2 ** (3 * n)), 0.0, 0.3 * 2 ** (-3.6 * n)) for n in range(1, 13)]
    prev = math.inf
    for depth in range(4, 13):
        bound, fit = tail_bound(stats[:depth], 0.9, 0.5, 0.5, 3.0)
        assert fit["ratio"] == pytest.approx(q)
        assert fit["c_count"] == pytest.approx(5.0, rel=1e-3)
        assert fit["c_mass"] == pytest.approx(0.3, rel=1e-12)
        assert bound == pytest.approx(fit["c_count"] * 0.3 * q ** (depth + 1) / (1 - q), rel=1e-12)
        if prev < math.inf:
            assert bound / prev == pytest.approx(q, rel=1e-3)
        prev = bound


def test_regularity_threshold_defaults():
    assert regularity_threshold(0.5, 0.5, 3.2) == pytest.approx(0.8)
    assert regularity_threshold(0.45, 0.55, 3.2) > 0.8


def test_regularity_insufficient(liouville, scheme6):
    rep = intersect(liouville, liouville, scheme6, nu=0.7)
    assert not rep.certified
    with pytest.raises(RegularityInsufficient):
        intersect(liouville, liouville, scheme6, nu=0.7, strict=True)


def test_tail_divergence_is_flagged(liouville, scheme6):
    rep = intersect(liouville, liouville, scheme6, nu=0.79)
    assert not rep.certified
    with pytest.raises(TailDiverges):
        tail_bound(rep.per_level, 0.75, 0.5, 0.5, 3.2)


def test_partial_sum_envelope(ll_report):
    env = partial_sum_envelope(ll_report)
    assert env["ok"]
    assert env["ratio"] == pytest.approx(2 ** (3.2 - 4.0))


# ---------------------------------------------------------------------------
# measure currents


def test_classical_liouville_atomic_monotone(surface, scheme6, liouville):
    a1 = AtomicCurveCurrent(surface.rep, (1,), depth=6, polygon=surface.polygon)
    rep = classical_intersection(liouville, a1, scheme6)
    assert rep.certified
    _, _, length = mb.axis_and_length(surface.rep((1,)))
    assert 0.0 <= rep.value <= length * (1 + 1e-9)
    assert all(s.partial >= 0 for s in rep.per_level)


def test_classical_rejects_signed(surface, fn2, scheme6, liouville):
    from llab.crossratio import InfinitesimalLiouville

    lv = InfinitesimalLiouville(surface, TeichPath.coordinate(fn2, "twist", 0), depth=5)
    with pytest.raises(ValueError):
        classical_intersection(liouville, lv, scheme6)


# ---------------------------------------------------------------------------
# independence


def test_identical_schemes(liouville, scheme6):
    out = scheme_independence_test(liouville, liouville, scheme6, scheme6)
    assert out["discrepancy"] == [0.0, 0.0, 0.0]
    assert out["pass"]


def test_inset_perturbation(liouville, omega, scheme6):
    other = DomainOmega(omega.polygon, inset=1e-6)
    out = domain_independence_test(liouville, liouville, omega, other, depth=6)
    assert out["pass"]
    assert abs(out["values"][0] - out["values"][1]) <= 1e-9 * out["values"][0]


def test_translated_domain(surface, liouville, ll_report):
    """The sum over a translate gamma(Omega) differs only through truncation."""
    _, g = surface.polygon.side_pairings[0]
    poly = dirichlet_polygon(surface.rep, PlanePoint(complex(g.apply_disk(0.0))))
    assert poly.area() == pytest.approx(4 * math.pi, abs=1e-6)
    s = generate_scheme(DomainOmega(poly), max_depth=6)
    rep = intersect(liouville, liouville, s)
    assert abs(rep.value - ll_report.value) <= rep.tail_bound + ll_report.tail_bound


# ---------------------------------------------------------------------------
# mixed partials and Gram matrices


def test_mixed_partial_constant_path(surface, fn2, paths, scheme6):
    rep = mixed_partial(surface, paths["twist0"], TeichPath.constant(fn2), scheme6, depth=6)
    assert rep.fd_estimate == 0.0
    assert rep.direct == 0.0


def test_mixed_partial_twist_length(surface, paths, scheme6):
    rep = mixed_partial(surface, paths["twist0"], paths["length0"], scheme6, depth=6)
    assert abs(rep.direct) > rep.direct_error
    assert rep.relative_discrepancy < 0.01
    assert abs(rep.fd_estimate_half - rep.fd_estimate) < 0.01 * abs(rep.fd_estimate)
    assert rep.exchange_residual < 1e-9


def test_mixed_partial_swap(surface, paths, scheme6):
    a = mixed_partial(surface, paths["twist0"], paths["length0"], scheme6, depth=6)
    b = mixed_partial(surface, paths["length0"], paths["twist0"], scheme6, depth=6)
    assert b.direct == pytest.approx(a.direct, rel=1e-12)
    assert b.fd_estimate == pytest.approx(a.fd_estimate, rel=1e-3)


def test_gram_diagnostics(surface, paths, scheme6):
    G = pairing_gram(surface, list(paths.values()), scheme6, depth=6)
    assert G.matrix.shape == (3, 3)
    assert G.asymmetry <= G.errors.max()
    assert max(G.bilinearity_residuals) < 1e-6
    assert G.min_eigenvalue == pytest.approx(np.linalg.eigvalsh((G.matrix + G.matrix.T) / 2).min())
    assert json.loads(json.dumps(G.to_dict()))["directions"] == [p.name for p in paths.values()]


def test_gram_rescaled_direction(surface, paths, scheme6):
    p = paths["twist0"]
    g1 = pairing_gram(surface, [p], scheme6, depth=6).matrix[0, 0]
    g2 = pairing_gram(surface, [p.scaled(2.0)], scheme6, depth=6).matrix[0, 0]
    assert g2 == pytest.approx(4 * g1, rel=1e-6)
