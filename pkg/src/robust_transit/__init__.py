"""Numerical toolkit for robustly transitive endomorphisms of the torus."""

__version__ = "0.1.0"

from .certificate import FAIL, INCONCLUSIVE, PASS, Certificate
from .geometry import ArcPolyline, BoxRegion, LiftPoint, TorusPoint, internal_diameter, torus_dist
from .maps import BumpTerm, MapSpec, TrigTerm, Window, linear_map
from .regions import GridCover, LambdaCover, compute_lambda_cover
from .shadowing import PseudoOrbit, shadow

__all__ = [
    "ArcPolyline", "BoxRegion", "BumpTerm", "Certificate", "FAIL", "GridCover", "INCONCLUSIVE",
    "LambdaCover", "LiftPoint", "MapSpec", "PASS", "PseudoOrbit", "TorusPoint", "TrigTerm", "Window",
    "compute_lambda_cover", "internal_diameter", "linear_map", "shadow", "torus_dist",
]
