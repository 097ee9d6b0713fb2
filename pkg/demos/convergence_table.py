"""Per-level partial sums of i(L, L) and i(L_V, L_V) for the uniform genus-2 structure.

Prints a gnuplot-ready table: level, boxes, partial sum, accumulated value.
"""
import argparse

from llab import DomainOmega, FenchelNielsenCoords, PlanePoint, Surface, generate_scheme
from llab.crossratio import InfinitesimalLiouville, LiouvilleCurrent
from llab.fuchsian import TeichPath
from llab.intersection import intersect

BASE = -0.30764202377293987 + 1.8295861430869568e-09j


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depth", type=int, default=8)
    args = ap.parse_args()
    fn = FenchelNielsenCoords.uniform(2, 2.0, 0.0)
    surface = Surface.build(fn, base=PlanePoint(BASE))
    scheme = generate_scheme(DomainOmega(surface.polygon), max_depth=args.depth)
    L = LiouvilleCurrent.on(surface, None, args.depth)
    LV = InfinitesimalLiouville(surface, TeichPath.coordinate(fn, "twist", 0), depth=args.depth)
    for name, f in (("L x L", L), ("L_V x L_V (twist a1)", LV)):
        rep = intersect(f, f, scheme, nu=0.9)
        print(f"# {name}: value {rep.value:.10g}, tail bound {rep.tail_bound:.4g}")
        for s, acc in zip(rep.per_level, rep.partial_values()):
            print(f"{s.n}\t{s.count}\t{s.partial:.10g}\t{acc:.10g}")
        print()


if __name__ == "__main__":
    main()
