"""Command-line front end.

Every command reads one JSON experiment config (``--config``; defaults are
used when omitted), applies flag overrides, runs one engine call and writes
a JSON report (plus CSV tables for anything plottable) into ``--out``.
Reports carry the resolved config, its hash and a hash of the package
sources, and contain no timestamps, so identical inputs give identical bytes.

Exit codes: 0 success, 1 computation failed, 2 usage or input error,
3 computed but not certified (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import moebius as mb
from .beltrami import (BeltramiCoefficient, BumpBeltrami, ConstantBeltrami, GridBeltrami, TwistCollarBeltrami,
                       beltrami_first_variation)
from .boxes import (BoxDomain, BoxG, DomainOmega, DoubleBox, GridSpec, SubdivisionScheme, count_profile,
                    generate_scheme, mc_coverage, minkowski_dimension_estimate)
from .crossratio import (AtomicCurveCurrent, CrossRatioFn, InfinitesimalLiouville, LiouvilleCurrent, ZeroCrossRatio,
                         regularity_check)
from .errors import LlabError, MemoryBudgetExceeded
from .fuchsian import (FenchelNielsenCoords, Surface, TeichPath, boundary_map, build_rep, dirichlet_polygon,
                       equivariance_residual, format_word, holder_exponent_estimate, pants_curve_words, parse_word)
from .intersection import (classical_intersection, domain_independence_test, intersect, mixed_partial,
                           pairing_gram, partial_sum_envelope, scheme_independence_test)

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_UNCERTIFIED = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class SurfaceSpec:
    genus: int = 2
    lengths: list | None = None
    twists: list | None = None
    base: typing.Any = "optimal"  # "optimal", "center" or [re, im] in the normalized disk
    word_budget: int = 3

    def fn(self) -> FenchelNielsenCoords:
        n = 3 * self.genus - 3
        lengths = self.lengths if self.lengths is not None else [2.0] * n
        twists = self.twists if self.twists is not None else [0.0] * n
        return FenchelNielsenCoords(self.genus, tuple(lengths), tuple(twists))


@dataclass
class PathSpec:
    name: str
    kind: str = "twist"  # twist, length, constant or custom
    index: int = 0
    speed: float = 1.0
    h: float = 1e-3  # step of the derivative along the path
    step: float = 1e-2  # step of the mixed-partial stencil
    d_lengths: list | None = None
    d_twists: list | None = None


@dataclass
class SchemeSpec:
    r: float = 0.5
    R: float = 0.5
    d: float = 3.2
    nu: float = 0.9
    depth: int = 8
    n_seed: int = 16
    offset: float = 0.0


@dataclass
class DomainSpec:
    kind: str = "dirichlet"  # dirichlet or boxes
    shift: list | None = None  # [re, im] disk point used as the Dirichlet center instead of the surface base
    inset: float = 1e-9
    boxes: list = field(default_factory=list)  # each box is four [start, end] arcs


@dataclass
class FunctionSpec:
    name: str
    kind: str = "liouville"  # liouville, infinitesimal, atomic, zero
    path: str | None = None
    t: float = 0.0
    word: str | None = None
    weight: float = 1.0
    depth: int = 5
    scale: float = 1.0


@dataclass
class BeltramiSpec:
    name: str
    kind: str = "constant"  # constant, bump, grid, twist_collar
    value: list = field(default_factory=lambda: [0.0, 0.0])
    center: list = field(default_factory=lambda: [0.0, 0.0])
    radius: float = 0.5
    amplitude: float = 0.1
    file: str | None = None
    word: str | None = None
    width: float = 0.3


@dataclass
class OutputSpec:
    dir: str = "llab-out"
    prefix: str = ""


@dataclass
class ExperimentConfig:
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    paths: list = field(default_factory=list)
    scheme: SchemeSpec = field(default_factory=SchemeSpec)
    domain: DomainSpec = field(default_factory=DomainSpec)
    functions: list = field(default_factory=list)
    beltrami: list = field(default_factory=list)
    output: OutputSpec = field(default_factory=OutputSpec)
    strict: bool = False
    workers: int = 1
    seed: int = 7

    def __post_init__(self):
        if not self.paths:
            self.paths = [PathSpec("twist0", "twist", 0), PathSpec("twist2", "twist", 2),
                          PathSpec("length1", "length", 1)]
        if not self.functions:
            self.functions = [FunctionSpec("L"), FunctionSpec("zero", "zero")]
            self.functions += [FunctionSpec(f"L_{p.name}", "infinitesimal", path=p.name) for p in self.paths]
            words = pants_curve_words(self.surface.genus)
            self.functions += [FunctionSpec(f"delta{k}", "atomic", word=format_word(w)) for k, w in enumerate(words)]
        self.validate()

    def validate(self) -> None:
        names = [f.name for f in self.functions] + [b.name for b in self.beltrami]
        if len(set(names)) != len(names):
            raise ConfigError("function and Beltrami names must be unique")
        paths = {p.name for p in self.paths}
        for f in self.functions:
            if f.kind not in ("liouville", "infinitesimal", "atomic", "zero"):
                raise ConfigError(f"unknown function kind {f.kind!r}")
            if f.path is not None and f.path not in paths:
                raise ConfigError(f"function {f.name!r} refers to unknown path {f.path!r}")
            if f.kind == "infinitesimal" and f.path is None:
                raise ConfigError(f"function {f.name!r} needs a path")
            if f.kind == "atomic" and not f.word:
                raise ConfigError(f"function {f.name!r} needs a word")
        for p in self.paths:
            if p.kind not in ("twist", "length", "constant", "custom"):
                raise ConfigError(f"unknown path kind {p.kind!r}")
        if self.domain.kind not in ("dirichlet", "boxes"):
            raise ConfigError(f"unknown domain kind {self.domain.kind!r}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def report_dict(self) -> dict:
        """Config as embedded in reports: the worker count is left out since results do not depend on it."""
        d = self.to_dict()
        d.pop("workers")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(cls, data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        text = json.dumps(self.report_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def path(self, name: str) -> TeichPath:
        for p in self.paths:
            if p.name == name:
                return make_path(p, self.surface.fn())
        raise ConfigError(f"unknown path {name!r}")

    def path_spec(self, name: str) -> PathSpec:
        for p in self.paths:
            if p.name == name:
                return p
        raise ConfigError(f"unknown path {name!r}")


_LIST_ITEMS = {("ExperimentConfig", "paths"): PathSpec, ("ExperimentConfig", "functions"): FunctionSpec,
               ("ExperimentConfig", "beltrami"): BeltramiSpec}


def _from_dict(cls, data):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} must be a JSON object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
    kw = {}
    for name, value in data.items():
        item = _LIST_ITEMS.get((cls.__name__, name))
        hint = hints[name]
        if item is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{name} must be a list")
            kw[name] = [_from_dict(item, v) for v in value]
        elif dataclasses.is_dataclass(hint):
            kw[name] = _from_dict(hint, value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def make_path(p: PathSpec, base: FenchelNielsenCoords) -> TeichPath:
    n = 3 * base.genus - 3
    if p.kind == "constant":
        path = TeichPath.constant(base, p.h)
    elif p.kind == "custom":
        dl = tuple(p.d_lengths or [0.0] * n)
        dt = tuple(p.d_twists or [0.0] * n)
        path = TeichPath(base, dl, dt, p.h)
    else:
        if not 0 <= p.index < n:
            raise ConfigError(f"path {p.name!r}: index {p.index} out of range")
        path = TeichPath.coordinate(base, p.kind, p.index, p.speed, p.h)
    return dataclasses.replace(path, name=p.name)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# provenance


def source_hash() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def version_info() -> dict:
    return {"package": "llab", "version": __version__, "source_hash": source_hash()}


def budget_mb() -> float | None:
    raw = os.environ.get("LLAB_BUDGET_MB")
    if raw in (None, ""):
        return None
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"LLAB_BUDGET_MB must be a number, got {raw!r}") from None
    if value <= 0:
        raise ConfigError("LLAB_BUDGET_MB must be positive")
    return value


# ---------------------------------------------------------------------------
# building blocks


class Context:
    """Lazily built objects shared by one command."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._surface = None
        self._scheme = None

    @property
    def surface(self) -> Surface:
        if self._surface is None:
            s = self.cfg.surface
            base = s.base
            if isinstance(base, list):
                base = mb.PlanePoint(complex(*base))
            self._surface = Surface.build(s.fn(), base=base, word_budget=s.word_budget)
        return self._surface

    def grid(self, offset: float | None = None) -> GridSpec:
        sc = self.cfg.scheme
        return GridSpec(sc.n_seed, sc.offset if offset is None else offset)

    def domain(self, shift=None):
        d = self.cfg.domain
        if d.kind == "boxes":
            boxes = []
            for b in d.boxes:
                a = [mb.Arc(*x) for x in b]
                boxes.append(DoubleBox(BoxG(a[0], a[1]), BoxG(a[2], a[3])))
            return BoxDomain(boxes)
        shift = d.shift if shift is None else shift
        if shift is None:
            return DomainOmega(self.surface.polygon, d.inset)
        poly = dirichlet_polygon(self.surface.rep, mb.PlanePoint(complex(*shift)), self.cfg.surface.word_budget)
        return DomainOmega(poly, d.inset)

    def scheme(self, path: str | None = None, offset: float | None = None, om=None) -> SubdivisionScheme:
        if path is not None:
            return load_scheme(path)
        if om is None and offset is None and self._scheme is not None:
            return self._scheme
        sc = self.cfg.scheme
        s = generate_scheme(om or self.domain(), self.grid(offset), max_depth=sc.depth, r=sc.r, R=sc.R, d=sc.d,
                            budget_mb=budget_mb())
        if om is None and offset is None:
            self._scheme = s
        return s

    def function(self, name: str) -> CrossRatioFn:
        for f in self.cfg.functions:
            if f.name == name:
                return self._make_function(f)
        raise ConfigError(f"unknown function {name!r}")

    def _make_function(self, f: FunctionSpec) -> CrossRatioFn:
        S = self.surface
        depth = self.cfg.scheme.depth
        if f.kind == "zero":
            fn = ZeroCrossRatio()
        elif f.kind == "liouville":
            if f.path is None or f.t == 0:
                fn = LiouvilleCurrent(S.rep, name=f.name)
            else:
                fn = LiouvilleCurrent.on(S, self.cfg.path(f.path).at(f.t), depth, name=f.name)
        elif f.kind == "infinitesimal":
            fn = InfinitesimalLiouville(S, self.cfg.path(f.path), depth=depth)
        else:
            fn = AtomicCurveCurrent(S.rep, parse_word(f.word), f.weight, f.depth, S.polygon)
            fn.check_depth()
        fn.name = f.name
        return fn if f.scale == 1 else fn.scaled(f.scale)

    def beltrami(self, name: str) -> BeltramiCoefficient:
        for b in self.cfg.beltrami:
            if b.name == name:
                return self._make_beltrami(b)
        raise ConfigError(f"unknown Beltrami coefficient {name!r}")

    def _make_beltrami(self, b: BeltramiSpec) -> BeltramiCoefficient:
        if b.kind == "constant":
            return ConstantBeltrami(complex(*b.value), b.name)
        if b.kind == "bump":
            return BumpBeltrami(complex(*b.center), b.radius, b.amplitude, b.name)
        if b.kind == "grid":
            if not b.file:
                raise ConfigError(f"Beltrami {b.name!r} needs a file")
            try:
                return GridBeltrami.from_json(Path(b.file).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read {b.file}: {exc.strerror}") from None
        if b.kind == "twist_collar":
            S = self.surface
            return TwistCollarBeltrami(S.rep, parse_word(b.word or "a1"), S.polygon, b.width, b.amplitude)
        raise ConfigError(f"unknown Beltrami kind {b.kind!r}")


def load_scheme(path: str) -> SubdivisionScheme:
    try:
        if path.endswith(".npz"):
            return SubdivisionScheme.load_npz(path)
        return SubdivisionScheme.from_dict(json.loads(Path(path).read_text()))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load scheme {path}: {exc}") from None


# ---------------------------------------------------------------------------
# output


class Writer:
    def __init__(self, cfg: ExperimentConfig, out: str | None):
        self.cfg = cfg
        self.dir = Path(out or cfg.output.dir)
        self.written: list[str] = []

    def _path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / f"{self.cfg.output.prefix}{name}"

    def json(self, name: str, command: str, payload: dict) -> Path:
        doc = {"command": command, "config": self.cfg.report_dict(), "config_hash": self.cfg.digest(),
               "version": version_info(), "result": _jsonable(payload)}
        p = self._path(name)
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.written.append(str(p))
        return p

    def text(self, name: str, text: str) -> Path:
        p = self._path(name)
        p.write_text(text)
        self.written.append(str(p))
        return p

    def csv(self, name: str, header: list, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# config_hash", self.cfg.digest(), "source_hash", source_hash()])
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        return self.text(name, buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


# ---------------------------------------------------------------------------
# commands


def cmd_surface_build(ctx: Context, args, out: Writer) -> int:
    S = ctx.surface
    poly = S.polygon
    words = pants_curve_words(S.fn.genus)
    report = {
        "fn": S.fn.to_dict(),
        "base_point": [S.base.w.real, S.base.w.imag],
        "polygon_area": poly.area(),
        "expected_area": 4 * math.pi * (S.fn.genus - 1),
        "polygon_vertices": len(poly.vertices),
        "circumradius": poly.circumradius(),
        "relation_defect": S.rep._relation_defect(),
        "pants_curves": [{"word": format_word(w), "length": S.rep.translation_length(w)} for w in words],
        "surface": S.to_dict(),
    }
    out.json("surface.json", "surface build", report)
    print(f"area {report['polygon_area']:.12g} (expected {report['expected_area']:.12g}), "
          f"{report['polygon_vertices']} sides, relation defect {report['relation_defect']:.3g}")
    return EXIT_OK


def cmd_boundary_map(ctx: Context, args, out: Writer) -> int:
    S = ctx.surface
    depth = args.depth if args.depth is not None else ctx.cfg.scheme.depth
    target_fn = ctx.cfg.path(args.path).at(args.t)
    rep1 = build_rep(target_fn)
    phi = boundary_map(S.rep, rep1, depth, S.polygon)
    resid = equivariance_residual(phi, S.rep, rep1)
    try:
        nu, fit = holder_exponent_estimate(phi, min_samples=min(1000, len(phi.source)))
    except LlabError as exc:
        nu, fit = None, {"error": str(exc)}
    report = {"target": target_fn.to_dict(), "depth": depth, "samples": len(phi.source),
              "discarded": phi.discarded, "max_gap": phi.max_gap(), "equivariance_residual": resid,
              "holder_exponent": nu, "holder_fit": fit}
    out.json("boundary_map.json", "boundary-map", report)
    out.csv("boundary_map.csv", ["source", "target"], zip(phi.source.tolist(), mb.wrap(phi.target).tolist()))
    print(f"{len(phi.source)} samples, held-out residual {resid['max']:.3g}, Hölder estimate {nu}")
    return EXIT_OK


def _arcs(values):
    a, b, c, d = values
    return mb.Arc(a, b), mb.Arc(c, d)


def cmd_eval(ctx: Context, args, out: Writer) -> int:
    I, J = _arcs(args.arcs)
    names = {b.name for b in ctx.cfg.beltrami}
    if args.fn in names:
        mu = ctx.beltrami(args.fn)
        res = beltrami_first_variation(mu, I, J, ctx.surface.rep, ctx.surface.polygon)
        report = {"kind": "beltrami_first_variation", "value": res.value, "error": res.error, **res.to_dict(),
                  "sup_norm": mu.sup_norm}
    else:
        f = ctx.function(args.fn)
        if isinstance(f, InfinitesimalLiouville):
            v, e = f.evaluate_with_error(I, J)
        else:
            v, e = float(f(I, J)), 0.0
        report = {"kind": "cross_ratio", "value": v, "error": e}
    report.update({"function": args.fn, "arcs": [[I.start, I.end], [J.start, J.end]]})
    out.json("eval.json", "eval", report)
    print(f"{args.fn}{tuple(args.arcs)} = {report['value']!r} ± {report['error']:.3g}")
    return EXIT_OK


def cmd_regularity(ctx: Context, args, out: Writer) -> int:
    f = ctx.function(args.fn)
    centers = f.polygon_lifts() if isinstance(f, AtomicCurveCurrent) else None
    nu, c0, rep = regularity_check(f, LiouvilleCurrent(ctx.surface.rep), scales=(args.lo, args.hi),
                                   n_scales=args.scales, centers=centers, seed=ctx.cfg.seed)
    report = {"function": args.fn, "exponent": nu, "c0": c0, **rep}
    out.json("regularity.json", "regularity", report)
    out.csv("regularity.csv", ["L", "envelope"], zip(rep["L"], rep["envelope"]))
    print(f"{args.fn}: exponent {nu:.4f}, regular {rep['regular']}")
    if ctx.cfg.strict and not rep["regular"]:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_scheme_generate(ctx: Context, args, out: Writer) -> int:
    om = ctx.domain()
    s = ctx.scheme(om=om)
    counts, slope = count_profile(s)
    report = {"identifier": s.identifier(), "counts": counts, "straddling": [2 * x for x in s.straddling],
              "count_slope": slope}
    if args.coverage:
        report["coverage_lebesgue"] = mc_coverage(s, om, args.coverage, seed=ctx.cfg.seed)
    name = f"scheme.{args.format}"
    if args.format == "npz":
        p = out._path(name)
        s.save_npz(p)
        out.written.append(str(p))
    else:
        out.text(name, s.to_json())
    out.text("scheme_counts.csv", s.counts_csv())
    out.json("scheme_summary.json", "scheme generate", report)
    print(f"counts {counts}, slope {slope:.3f}")
    return EXIT_OK


def _length_oracle(ctx: Context, f: CrossRatioFn) -> dict | None:
    if isinstance(f, AtomicCurveCurrent):
        return {"word": format_word(f.word), "length": f.weight * ctx.surface.rep.translation_length(f.word)}
    return None


def cmd_intersect(ctx: Context, args, out: Writer) -> int:
    a, b = ctx.function(args.alpha), ctx.function(args.beta)
    s = ctx.scheme(args.scheme)
    measures = a.nonnegative and b.nonnegative and (a.nu is None or b.nu is None)
    if measures:
        rep = classical_intersection(a, b, s, workers=ctx.cfg.workers)
    else:
        rep = intersect(a, b, s, nu=ctx.cfg.scheme.nu, workers=ctx.cfg.workers)
    payload = rep.to_dict()
    payload["envelope"] = partial_sum_envelope(rep) if rep.fit else None
    if not measures and math.isfinite(rep.tail_bound) and rep.value != 0:
        payload["tail_fraction"] = rep.tail_bound / abs(rep.value)
    oracle = _length_oracle(ctx, a) or _length_oracle(ctx, b)
    if oracle and (isinstance(a, LiouvilleCurrent) or isinstance(b, LiouvilleCurrent)):
        payload["length_oracle"] = {**oracle, "relative_error": abs(rep.value - oracle["length"]) / oracle["length"]}
    out.json("intersect.json", "intersect", payload)
    out.text("intersect_levels.csv", rep.per_level_csv())
    print(f"i({args.alpha}, {args.beta}) = {rep.value!r}, tail bound {rep.tail_bound:.4g}, certified {rep.certified}")
    if ctx.cfg.strict and not rep.certified:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_independence(ctx: Context, args, out: Writer) -> int:
    a, b = ctx.function(args.alpha), ctx.function(args.beta)
    nu = ctx.cfg.scheme.nu
    if args.kind == "scheme":
        sa = ctx.scheme()
        sb = ctx.scheme(offset=ctx.cfg.scheme.offset + args.rotate)
        res = scheme_independence_test(a, b, sa, sb, nu=nu, workers=ctx.cfg.workers)
    else:
        om_a = ctx.domain()
        w = math.tanh(args.distance / 2) * complex(math.cos(args.direction), math.sin(args.direction))
        om_b = ctx.domain(shift=[w.real, w.imag])
        schemes = (ctx.scheme(om=om_a), ctx.scheme(om=om_b))
        res = domain_independence_test(a, b, om_a, om_b, depth=ctx.cfg.scheme.depth, nu=nu, schemes=schemes,
                                       workers=ctx.cfg.workers)
    res["kind"] = args.kind
    out.json("independence.json", "independence", res)
    out.csv("independence.csv", ["depth", "discrepancy", "envelope"],
            zip(res["depths"], res["discrepancy"], res["envelope"]))
    print(f"{args.kind} independence: values {res['values']}, pass {res['pass']}")
    if ctx.cfg.strict and not res["pass"]:
        return EXIT_UNCERTIFIED
    return EXIT_OK


def cmd_mixed_partial(ctx: Context, args, out: Writer) -> int:
    pt, pu = ctx.cfg.path_spec(args.t_path), ctx.cfg.path_spec(args.u_path)
    s = ctx.scheme(args.scheme)
    rep = mixed_partial(ctx.surface, ctx.cfg.path(args.t_path), ctx.cfg.path(args.u_path), s,
                        steps=(pt.step, pu.step), depth=ctx.cfg.scheme.depth, workers=ctx.cfg.workers)
    payload = rep.to_dict()
    payload["within_5_percent"] = bool(rep.discrepancy <= 0.05 * abs(rep.direct))
    out.json("mixed_partial.json", "mixed-partial", payload)
    out.csv("mixed_partial_levels.csv", ["level", "fd", "direct"],
            [(n, x, y) for n, (x, y) in enumerate(zip(rep.per_level_fd, rep.per_level_direct), start=1)])
    print(f"FD {rep.fd_estimate!r} (half step {rep.fd_estimate_half!r}), direct {rep.direct!r} "
          f"± {rep.direct_error:.3g}")
    return EXIT_OK


def cmd_gram(ctx: Context, args, out: Writer) -> int:
    names = args.paths.split(",") if args.paths else [p.name for p in ctx.cfg.paths]
    paths = [ctx.cfg.path(n) for n in names]
    s = ctx.scheme(args.scheme)
    g = pairing_gram(ctx.surface, paths, s, depth=ctx.cfg.scheme.depth, workers=ctx.cfg.workers)
    out.json("gram.json", "gram", g.to_dict())
    print(f"Gram over {names}: asymmetry {g.asymmetry:.3g}, min eigenvalue {g.min_eigenvalue:.6g}")
    return EXIT_OK


def cmd_dimension(ctx: Context, args, out: Writer) -> int:
    om = ctx.domain()
    s = ctx.scheme(om=om)
    straddle = [2 * x for x in s.straddling]
    levels = s.depth
    dim, _ = minkowski_dimension_estimate(om, levels=levels, grid=s.grid, counts=straddle)
    counts, slope = count_profile(s)
    report = {"domain": s.domain_id, "dimension": dim, "straddling": straddle, "counts": counts,
              "count_slope": slope, "empty": sum(counts) == 0 and sum(straddle) == 0}
    out.json("dimension.json", "dimension", report)
    out.csv("dimension.csv", ["level", "straddling", "accepted"],
            [(n, x, y) for n, (x, y) in enumerate(zip(straddle, counts), start=1)])
    print(f"frontier dimension {dim:.3f}, count slope {slope}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--depth", type=int, help="override the truncation depth")
    common.add_argument("--workers", type=int, help="override the worker count")
    common.add_argument("--strict", action="store_true", default=None, help="exit 3 when a result is not certified")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="llab", description="Intersections of Liouville cross-ratio functions")
    p.add_argument("--version", action="version", version=f"llab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    surf = sub.add_parser("surface", help="surface commands")
    ssub = surf.add_subparsers(dest="action", required=True)
    ssub.add_parser("build", parents=[common], help="build representation and polygon").set_defaults(
        func=cmd_surface_build)

    q = sub.add_parser("boundary-map", parents=[common], help="sampled boundary map to a deformed structure")
    q.add_argument("--path", required=True)
    q.add_argument("--t", type=float, default=0.1)
    q.set_defaults(func=cmd_boundary_map)

    q = sub.add_parser("eval", parents=[common], help="evaluate a cross-ratio or Beltrami variation on an arc pair")
    q.add_argument("--fn", required=True)
    q.add_argument("--arcs", type=float, nargs=4, required=True, metavar=("A", "B", "C", "D"))
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("regularity", parents=[common], help="Hölder envelope fit")
    q.add_argument("--fn", required=True)
    q.add_argument("--lo", type=float, default=1e-6)
    q.add_argument("--hi", type=float, default=1e-2)
    q.add_argument("--scales", type=int, default=9)
    q.set_defaults(func=cmd_regularity)

    sch = sub.add_parser("scheme", help="scheme commands")
    schsub = sch.add_subparsers(dest="action", required=True)
    q = schsub.add_parser("generate", parents=[common], help="generate a subdivision scheme")
    q.add_argument("--format", choices=["npz", "json"], default="npz")
    q.add_argument("--coverage", type=int, default=0, help="Monte Carlo coverage samples (0 to skip)")
    q.set_defaults(func=cmd_scheme_generate)

    q = sub.add_parser("intersect", parents=[common], help="intersection number of two named functions")
    q.add_argument("--alpha", default="L")
    q.add_argument("--beta", default="L")
    q.add_argument("--scheme", help="precomputed scheme file (.npz or .json)")
    q.set_defaults(func=cmd_intersect)

    q = sub.add_parser("independence", parents=[common], help="scheme or domain independence test")
    q.add_argument("--kind", choices=["scheme", "domain"], default="scheme")
    q.add_argument("--alpha", default="L")
    q.add_argument("--beta", default="L")
    q.add_argument("--rotate", type=float, default=0.1, help="seed rotation for --kind scheme")
    q.add_argument("--distance", type=float, default=0.3, help="base point displacement for --kind domain")
    q.add_argument("--direction", type=float, default=0.0)
    q.set_defaults(func=cmd_independence)

    q = sub.add_parser("mixed-partial", parents=[common], help="finite-difference mixed partial vs direct pairing")
    q.add_argument("--t-path", required=True)
    q.add_argument("--u-path", required=True)
    q.add_argument("--scheme")
    q.set_defaults(func=cmd_mixed_partial)

    q = sub.add_parser("gram", parents=[common], help="pairing Gram matrix of deformation directions")
    q.add_argument("--paths", help="comma-separated path names (default: all)")
    q.add_argument("--scheme")
    q.set_defaults(func=cmd_gram)

    q = sub.add_parser("dimension", parents=[common], help="frontier box-counting dimension")
    q.set_defaults(func=cmd_dimension)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.depth is not None:
            cfg.scheme.depth = args.depth
        if args.workers is not None:
            cfg.workers = args.workers
        if args.strict:
            cfg.strict = True
        cfg.validate()
        ctx = Context(cfg)
        return args.func(ctx, args, Writer(cfg, args.out))
    except (ConfigError, MemoryBudgetExceeded) as exc:
        print(f"llab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LlabError as exc:
        print(f"llab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
