"""Intersection numbers of Liouville cross-ratio functions on closed hyperbolic surfaces."""

__version__ = "0.1.0"

from .beltrami import (BumpBeltrami, ConstantBeltrami, GridBeltrami, PolygonRule, TwistCollarBeltrami,
                       beltrami_first_variation)
from .boxes import (BoxDomain, BoxG, DomainOmega, DoubleBox, GridSpec, SubdivisionScheme, count_profile,
                    generate_scheme, mc_coverage, minkowski_dimension_estimate)
from .crossratio import (AtomicCurveCurrent, CrossRatioFn, InfinitesimalLiouville, LiouvilleCurrent, ZeroCrossRatio,
                         regularity_check)
from .errors import *  # noqa: F401,F403
from .fuchsian import (BoundaryMap, FenchelNielsenCoords, FuchsianRep, FundamentalPolygon, Surface, TeichPath,
                       boundary_map, build_rep, dirichlet_polygon, enumerate_group, equivariance_residual,
                       evaluate_boundary_map,
                       holder_exponent_estimate, pants_curve_words, OrbitSet)
from .intersection import (IntersectionReport, classical_intersection, domain_independence_test, intersect,
                           mixed_partial, pairing_gram, scheme_independence_test)
from .moebius import Arc, Geodesic, MobiusMap, PlanePoint, liouville_box_mass, liouville_mass_angles
