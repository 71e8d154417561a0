"""bilipfactor: build and numerically certify small-distortion factorizations
of bi-Lipschitz maps of the plane and of 3-space, together with the
supporting machinery (corona-type stopping decompositions, topological
degree checks, piecewise-affine approximation, chordal-metric factoring)."""

__version__ = "0.1.0"
