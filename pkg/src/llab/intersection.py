"""Intersection numbers of cross-ratio functions as sums over subdivision schemes.

For a scheme with accepted cells (I1, I2, I3, I4) the value is

    sum over cells of alpha(I1, I2) beta(I3, I4) + alpha(I3, I4) beta(I1, I2),

each stored cell standing for the two double boxes (B1, B2) and (B2, B1).
Arc-pair values are tabulated per level as matrices, and the cell sums run
in fixed blocks with compensated accumulation so that the result does not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .boxes import DomainOmega, SubdivisionScheme, count_profile, generate_scheme
from .crossratio import CrossRatioFn, InfinitesimalLiouville, LiouvilleCurrent
from .errors import DerivativeUnstable, RegularityInsufficient, TailDiverges
from .fuchsian import Surface, TeichPath

BLOCK = 1 << 16


@njit(cache=True, nogil=True)
def _block_sum(cells, A, B, start, stop, out):
    s = 0.0
    c = 0.0
    mx = 0.0
    for k in range(start, stop):
        i1 = cells[k, 0]
        i2 = cells[k, 1]
        i3 = cells[k, 2]
        i4 = cells[k, 3]
        t = A[i1, i2] * B[i3, i4]
        u = s + t
        if abs(s) >= abs(t):
            c += (s - u) + t
        else:
            c += (t - u) + s
        s = u
        if abs(t) > mx:
            mx = abs(t)
        t = A[i3, i4] * B[i1, i2]
        u = s + t
        if abs(s) >= abs(t):
            c += (s - u) + t
        else:
            c += (t - u) + s
        s = u
        if abs(t) > mx:
            mx = abs(t)
    out[0] = s
    out[1] = c
    out[2] = mx


def level_sum(cells: np.ndarray, A: np.ndarray, B: np.ndarray, workers: int = 1) -> tuple[float, float]:
    """Sum of the double-box products over a level's cells, and the largest |product|.

    Blocks have a fixed size; per-block sums and compensations are combined
    with an exactly rounded sum in block order, so the result is the same for
    any worker count.
    """
    cells = np.ascontiguousarray(cells, dtype=np.int32)
    A = np.ascontiguousarray(A, dtype=float)
    B = np.ascontiguousarray(B, dtype=float)
    n = len(cells)
    if n == 0:
        return 0.0, 0.0
    starts = list(range(0, n, BLOCK))
    res = np.zeros((len(starts), 3))

    def run(k):
        _block_sum(cells, A, B, starts[k], min(starts[k] + BLOCK, n), res[k])

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(run, range(len(starts))))
    else:
        for k in range(len(starts)):
            run(k)
    total = math.fsum(np.concatenate([res[:, 0], res[:, 1]]).tolist())
    return total, float(res[:, 2].max())


# ---------------------------------------------------------------------------
# reports


@dataclass
class LevelStats:
    n: int
    count: int
    partial: float
    max_abs: float


@dataclass
class IntersectionReport:
    value: float
    per_level: list
    tail_bound: float
    parameters: dict
    provenance: dict
    certified: bool = True
    notes: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)

    def partial_values(self) -> list[float]:
        """Accumulated value after each level."""
        out, acc = [], []
        for s in self.per_level:
            acc.append(s.partial)
            out.append(math.fsum(acc))
        return out

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "tail_bound": self.tail_bound,
            "certified": self.certified,
            "parameters": self.parameters,
            "provenance": self.provenance,
            "fit": self.fit,
            "notes": self.notes,
            "per_level": [asdict(s) for s in self.per_level],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def per_level_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "count", "partial_sum", "accumulated", "max_abs_box"])
        for s, acc in zip(self.per_level, self.partial_values()):
            w.writerow([s.n, s.count, repr(s.partial), repr(acc), repr(s.max_abs)])
        return buf.getvalue()


def regularity_threshold(r: float, R: float, d: float) -> float:
    """Smallest exponent certifying convergence and scheme independence."""
    q = math.log(r) / math.log(R)
    return max(d / 4 * q, 2 * (q - 1) + d / 4)


def tail_ratio(nu: float, r: float, R: float, d: float) -> float:
    return r ** (-d) * R ** (4 * nu)


def _fixed_slope_constant(levels, values, log_rate) -> float:
    """Least-squares constant c in log(values) ~ log(c) + n log_rate."""
    lv = np.array(levels, dtype=float)
    y = np.log(np.asarray(values, dtype=float))
    return float(math.exp(np.mean(y - lv * log_rate)))


def tail_bound(per_level: list, nu: float, r: float, R: float, d: float, first_level: int = 3) -> tuple[float, dict]:
    """Geometric tail past the last level with constants fitted on the observed levels.

    c_count fits |B_n| against r^(-d n) and c_mass fits the largest box
    product against R^(4 nu n), both by least squares on logarithms with the
    slope fixed.  Raises :class:`TailDiverges` when the ratio is not below 1.
    """
    q = tail_ratio(nu, r, R, d)
    if q >= 1 - 1e-12:
        raise TailDiverges(f"per-level ratio {q:.6g} is not below 1")
    use = [s for s in per_level if s.n >= first_level and s.count > 0 and s.max_abs > 0]
    depth = max((s.n for s in per_level), default=0)
    if not use:
        return 0.0, {"ratio": q, "c_count": 0.0, "c_mass": 0.0}
    c_count = _fixed_slope_constant([s.n for s in use], [s.count for s in use], -d * math.log(r))
    c_mass = _fixed_slope_constant([s.n for s in use], [s.max_abs for s in use], 4 * nu * math.log(R))
    bound = c_count * c_mass * q ** (depth + 1) / (1 - q)
    return bound, {"ratio": q, "c_count": c_count, "c_mass": c_mass}


def partial_sum_envelope(report: IntersectionReport, first_level: int = 3, safety: float = 10.0) -> dict:
    """Fit |partial_n| ~ c q^n on levels past first_level and test every level against safety * c q^n."""
    q = report.fit.get("ratio") or tail_ratio(report.parameters["nu"], report.parameters["r"], report.parameters["R"],
                                              report.parameters["d"])
    use = [s for s in report.per_level if s.n >= first_level and s.partial != 0]
    if not use:
        return {"c": 0.0, "ratio": q, "ok": True, "excess": []}
    c = _fixed_slope_constant([s.n for s in use], [abs(s.partial) for s in use], math.log(q))
    excess = [abs(s.partial) / (c * q**s.n) for s in use]
    return {"c": c, "ratio": q, "levels": [s.n for s in use], "excess": excess, "ok": max(excess) <= safety}


# ---------------------------------------------------------------------------
# summation


class _Tables:
    """Per-level arc-pair matrices of a cross-ratio function, computed on demand."""

    def __init__(self, fn: CrossRatioFn, scheme: SubdivisionScheme):
        self.fn = fn
        self.scheme = scheme
        self._cache: dict = {}

    def __getitem__(self, level: int) -> np.ndarray:
        if level not in self._cache:
            self._cache[level] = self.fn.grid_matrix(self.scheme.grid.angles(level))
        return self._cache[level]


def _tables(fn, scheme) -> _Tables:
    if isinstance(fn, _Tables):
        return fn
    return _Tables(fn, scheme)


def _nu_of(alpha: CrossRatioFn, beta: CrossRatioFn, nu: float | None):
    if nu is not None:
        return nu
    vals = [x.nu for x in (alpha, beta)]
    if any(v is None for v in vals):
        return None
    return min(vals)


def intersect(alpha, beta, scheme: SubdivisionScheme, nu: float | None = None, workers: int = 1,
              strict: bool = False, depth: int | None = None) -> IntersectionReport:
    """i(alpha, beta) over the scheme's accepted boxes up to ``depth`` (default: all levels)."""
    ta, tb = _tables(alpha, scheme), _tables(beta, scheme)
    fa, fb = ta.fn, tb.fn
    depth = scheme.depth if depth is None else min(depth, scheme.depth)
    r, R, d = scheme.r, scheme.R, scheme.d
    nu_eff = _nu_of(fa, fb, nu)
    notes = []
    certified = True
    threshold = regularity_threshold(r, R, d)
    if nu_eff is None or nu_eff <= threshold:
        certified = False
        msg = f"regularity exponent {nu_eff} does not exceed {threshold:.4g}"
        notes.append(msg)
        if strict:
            raise RegularityInsufficient(msg)
    per_level = []
    for n in range(1, depth + 1):
        cells = scheme.accepted[n - 1]
        if len(cells) == 0:
            per_level.append(LevelStats(n, 0, 0.0, 0.0))
            continue
        A = ta[n]
        B = A if tb is ta else tb[n]
        s, mx = level_sum(cells, A, B, workers)
        per_level.append(LevelStats(n, 2 * len(cells), s, mx))
    value = math.fsum(s.partial for s in per_level)
    fit = {}
    tail = float("nan")
    if nu_eff is not None:
        try:
            tail, fit = tail_bound(per_level, nu_eff, r, R, d)
        except TailDiverges as exc:
            certified = False
            notes.append(str(exc))
            if strict:
                raise
    params = {"r": r, "R": R, "d": d, "nu": nu_eff, "depth": depth}
    prov = {"scheme": scheme.identifier(), "domain": scheme.domain_id, "alpha": fa.name, "beta": fb.name}
    return IntersectionReport(value, per_level, tail, params, prov, certified, notes, fit)


def classical_intersection(mu: CrossRatioFn, nu_c: CrossRatioFn, scheme: SubdivisionScheme,
                           workers: int = 1) -> IntersectionReport:
    """Intersection of two measure currents; certified by nonnegativity of every level."""
    fa = mu.fn if isinstance(mu, _Tables) else mu
    fb = nu_c.fn if isinstance(nu_c, _Tables) else nu_c
    if not (fa.nonnegative and fb.nonnegative):
        raise ValueError("classical intersection needs nonnegative currents")
    rep = intersect(mu, nu_c, scheme, nu=1.0, workers=workers)
    monotone = all(s.partial >= 0 for s in rep.per_level)
    rep.certified = monotone
    rep.notes = [] if monotone else ["a level contributed a negative amount"]
    rep.notes.append("measure currents: partial sums are monotone, value approached from below")
    rep.parameters["nu"] = None
    return rep


# ---------------------------------------------------------------------------
# independence


def _discrepancies(ra: IntersectionReport, rb: IntersectionReport, first: int) -> tuple[list, list]:
    pa, pb = ra.partial_values(), rb.partial_values()
    depths = list(range(first, min(len(pa), len(pb)) + 1))
    return depths, [abs(pa[n - 1] - pb[n - 1]) for n in depths]


def _envelope_report(depths, disc, rate_log2: float, safety: float, values) -> dict:
    env = [2.0 ** (rate_log2 * n) for n in depths]
    pos = [(n, x, e) for n, x, e in zip(depths, disc, env) if x > 0]
    if not pos:
        return {"depths": depths, "discrepancy": disc, "envelope": env, "constant": 0.0, "slope_log2": None,
                "predicted_slope_log2": rate_log2, "pass": True, "values": values}
    c = float(math.exp(np.mean([math.log(x / e) for _, x, e in pos])))
    slope = float(np.polyfit([n for n, _, _ in pos], [math.log2(x) for _, x, _ in pos], 1)[0]) if len(pos) > 1 else None
    within = disc[-1] <= safety * c * env[-1]
    return {
        "depths": depths,
        "discrepancy": disc,
        "envelope": env,
        "constant": c,
        "slope_log2": slope,
        "predicted_slope_log2": rate_log2,
        "within_envelope": bool(within),
        "decreasing": bool(slope is not None and slope < 0),
        "pass": bool(within and (slope is None or slope < 0)),
        "values": values,
    }


def scheme_independence_test(alpha, beta, scheme_a: SubdivisionScheme, scheme_b: SubdivisionScheme,
                             nu: float = 0.9, safety: float = 10.0, first_depth: int = 4, workers: int = 1) -> dict:
    """Compare truncated intersections over two schemes of one domain, depth by depth.

    The envelope is (R^(8-d+4nu) r^-8)^N with a constant fitted by least
    squares on logs; PASS needs the last discrepancy within safety times the
    fitted envelope and a negative discrepancy slope.
    """
    ra = intersect(alpha, beta, scheme_a, nu=nu, workers=workers)
    rb = intersect(alpha, beta, scheme_b, nu=nu, workers=workers)
    r, R, d = scheme_a.r, scheme_a.R, scheme_a.d
    rate = (8 - d + 4 * nu) * math.log2(R) - 8 * math.log2(r)
    depths, disc = _discrepancies(ra, rb, first_depth)
    out = _envelope_report(depths, disc, rate, safety, [ra.value, rb.value])
    out["schemes"] = [scheme_a.identifier(), scheme_b.identifier()]
    return out


def domain_independence_test(alpha, beta, om_a: DomainOmega, om_b: DomainOmega, depth: int = 8, nu: float = 0.9,
                             safety: float = 10.0, first_depth: int = 4, schemes: tuple | None = None,
                             workers: int = 1) -> dict:
    """Compare intersections over schemes of two domains; envelope R^((4-d+4nu)N) r^(-4N)."""
    if schemes is None:
        schemes = (generate_scheme(om_a, max_depth=depth), generate_scheme(om_b, max_depth=depth))
    sa, sb = schemes
    ra = intersect(alpha, beta, sa, nu=nu, workers=workers)
    rb = intersect(alpha, beta, sb, nu=nu, workers=workers)
    r, R, d = sa.r, sa.R, sa.d
    rate = (4 - d + 4 * nu) * math.log2(R) - 4 * math.log2(r)
    depths, disc = _discrepancies(ra, rb, first_depth)
    out = _envelope_report(depths, disc, rate, safety, [ra.value, rb.value])
    out["domains"] = [om_a.identifier(), om_b.identifier()]
    return out


# ---------------------------------------------------------------------------
# mixed partials and Gram matrices


@dataclass
class MixedPartialReport:
    fd_estimate: float
    fd_estimate_half: float
    direct: float
    direct_error: float
    steps: tuple
    discrepancy: float
    relative_discrepancy: float
    exchange_residual: float
    per_level_fd: list
    per_level_direct: list

    def to_dict(self) -> dict:
        return asdict(self)


def mixed_partial(surface: Surface, path_t: TeichPath, path_u: TeichPath, scheme: SubdivisionScheme,
                  steps: tuple = (1e-2, 1e-2), depth: int = 8, workers: int = 1, rtol: float = 0.1,
                  direct_h: float = 1e-3) -> MixedPartialReport:
    """Central 2D difference of i(L_{m_t}, L_{n_u}) at 0 against i(L_V, L_W) on the same scheme."""
    ht, hu = steps

    def tables(path, t):
        return _Tables(LiouvilleCurrent.on(surface, path.at(t), depth), scheme)

    def stencil(h, k):
        tp, tm = tables(path_t, h), tables(path_t, -h)
        up, um = tables(path_u, k), tables(path_u, -k)
        per = []
        for n in range(1, scheme.depth + 1):
            cells = scheme.accepted[n - 1]
            if len(cells) == 0:
                per.append(0.0)
                continue
            vals = [level_sum(cells, a[n], b[n], workers)[0] for a, b in ((tp, up), (tp, um), (tm, up), (tm, um))]
            per.append((vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h * k))
        return math.fsum(per), per, (tp, up, um)

    fd, per_fd, (tp, up, um) = stencil(ht, hu)
    fd_half, _, _ = stencil(ht / 2, hu / 2)
    if abs(fd_half - fd) > rtol * max(abs(fd_half), 1e-300) and abs(fd_half - fd) > 1e-12:
        raise DerivativeUnstable(f"mixed partial changed from {fd:.6g} to {fd_half:.6g} on step halving")
    # exchange identity: sum of L_t x (difference in u) equals difference of sums
    resid = 0.0
    for n in range(1, scheme.depth + 1):
        cells = scheme.accepted[n - 1]
        if len(cells) == 0:
            continue
        dU = (up[n] - um[n]) / (2 * hu)
        lhs = level_sum(cells, tp[n], dU, workers)[0]
        rhs = (level_sum(cells, tp[n], up[n], workers)[0] - level_sum(cells, tp[n], um[n], workers)[0]) / (2 * hu)
        resid = max(resid, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    LV = InfinitesimalLiouville(surface, path_t, h=direct_h, depth=depth)
    LW = InfinitesimalLiouville(surface, path_u, h=direct_h, depth=depth)
    tv, tw = _Tables(LV, scheme), _Tables(LW, scheme)
    err_v = {}
    err_w = {}
    for n in range(1, scheme.depth + 1):
        if len(scheme.accepted[n - 1]):
            g = scheme.grid.angles(n)
            tv._cache[n], err_v[n] = LV.grid_matrix_with_error(g)
            tw._cache[n], err_w[n] = LW.grid_matrix_with_error(g)
    direct_rep = intersect(tv, tw, scheme, workers=workers)
    # error propagation: |dA| |B| + |A| |dB| summed over boxes
    err = 0.0
    for n in err_v:
        cells = scheme.accepted[n - 1]
        err += level_sum(cells, err_v[n], np.abs(tw[n]), workers)[0]
        err += level_sum(cells, np.abs(tv[n]), err_w[n], workers)[0]
    direct = direct_rep.value
    disc = abs(fd - direct)
    return MixedPartialReport(
        fd, fd_half, direct, err, (ht, hu), disc, disc / abs(direct) if direct else float("inf"), resid, per_fd,
        [s.partial for s in direct_rep.per_level],
    )


@dataclass
class PairingGram:
    names: list
    matrix: np.ndarray
    errors: np.ndarray
    asymmetry: float
    min_eigenvalue: float
    bilinearity_residuals: list

    def to_dict(self) -> dict:
        return {
            "directions": self.names,
            "matrix": self.matrix.tolist(),
            "errors": self.errors.tolist(),
            "asymmetry": self.asymmetry,
            "min_eigenvalue": self.min_eigenvalue,
            "bilinearity_residuals": self.bilinearity_residuals,
        }


def pairing_gram(surface: Surface, paths: list, scheme: SubdivisionScheme, depth: int = 8, workers: int = 1,
                 rescale: float = 2.0) -> PairingGram:
    """Matrix of i(L_Vi, L_Vj) with symmetry, positivity and rescaling diagnostics."""
    k = len(paths)
    tabs, errs = [], []
    for p in paths:
        LV = InfinitesimalLiouville(surface, p, depth=depth)
        t, e = _Tables(LV, scheme), {}
        for n in range(1, scheme.depth + 1):
            if len(scheme.accepted[n - 1]):
                t._cache[n], e[n] = LV.grid_matrix_with_error(scheme.grid.angles(n))
        tabs.append(t)
        errs.append(e)
    G = np.zeros((k, k))
    E = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            G[i, j] = intersect(tabs[i], tabs[j], scheme, workers=workers).value
            e = 0.0
            for n in errs[i]:
                cells = scheme.accepted[n - 1]
                e += level_sum(cells, errs[i][n], np.abs(tabs[j][n]), workers)[0]
                e += level_sum(cells, np.abs(tabs[i][n]), errs[j][n], workers)[0]
            E[i, j] = e
    asym = float(np.max(np.abs(G - G.T)))
    min_eig = float(np.min(np.linalg.eigvalsh((G + G.T) / 2)))
    bil = []
    for i, p in enumerate(paths):
        LV2 = InfinitesimalLiouville(surface, p.scaled(rescale), depth=depth)
        g2 = intersect(LV2, LV2, scheme, workers=workers).value
        bil.append(abs(g2 - rescale**2 * G[i, i]) / max(abs(G[i, i]) * rescale**2, 1e-300))
    return PairingGram([p.name for p in paths], G, E, asym, min_eig, bil)


def run_count_profile(scheme: SubdivisionScheme) -> dict:
    counts, slope = count_profile(scheme)
    return {"counts": counts, "slope": slope}
