"""Boundary map from the uniform genus-2 structure to a twisted one, with its Hölder exponent estimate."""
import argparse

from llab import FenchelNielsenCoords, boundary_map, build_rep, equivariance_residual, holder_exponent_estimate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--twist", type=float, default=0.5)
    ap.add_argument("--depth", type=int, default=10)
    args = ap.parse_args()
    rep0 = build_rep(FenchelNielsenCoords.uniform(2, 2.0, 0.0))
    rep1 = build_rep(FenchelNielsenCoords.uniform(2, 2.0, args.twist))
    for d in range(5, args.depth + 1):
        phi = boundary_map(rep0, rep1, d)
        res = equivariance_residual(phi, rep0, rep1)
        print(f"depth {d}: {len(phi.source)} samples, held-out residual {res['max']:.4g}")
    nu, fit = holder_exponent_estimate(phi, min_samples=min(1000, len(phi.source)))
    print(f"Hölder exponent estimate {nu:.4f}")


if __name__ == "__main__":
    main()
