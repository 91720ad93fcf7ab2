"""Initial orbit determination from radar range, direction and Doppler triples.

Approximate maximum-likelihood estimation by block coordinate descent over a
convex relaxation, a trilateration baseline, and a Monte Carlo harness.
"""
from .frames import GeodeticCoord, KeplerianElements, StateVector, geodetic_to_ecef, kepler_to_cartesian
from .measmodel import MeasurementSet, NoiseFamily, RadarSite, apply_noise, ideal_measurements, kappa_to_sigma
from .mle import SolverConfig, SolverReport, solve
from .trilat import trilaterate, trilaterate_measurements
from .trs import TrsProblem, TrsSolution, check_kkt, solve_trs

__version__ = "0.1.0"
