"""Classical trilateration baseline: three ranges fix the position, three
Doppler-derived range-rates fix the velocity.

The two sphere-intersection roots are disambiguated with the measured line
of sight directions; being above the Earth ellipsoid breaks exact ties.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import WGS84_A, WGS84_B, StateVector
from .measmodel import SPEED_OF_LIGHT, MeasurementSet


class GeometryError(ValueError):
    pass


class InfeasibleRangesError(ValueError):
    pass


@dataclass(frozen=True)
class TrilaterationInput:
    sites: tuple
    ranges: np.ndarray
    dopplers: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        if len(self.sites) != 3:
            raise ValueError(f"trilateration needs exactly 3 sites, got {len(self.sites)}")
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "ranges", np.asarray(self.ranges, dtype=float).reshape(3))
        object.__setattr__(self, "dopplers", np.asarray(self.dopplers, dtype=float).reshape(3))
        object.__setattr__(self, "directions", np.asarray(self.directions, dtype=float).reshape(3, 3))

    @classmethod
    def from_measurements(cls, data: MeasurementSet, sites):
        if len(data) != 3:
            raise ValueError(f"trilateration needs exactly 3 measurement triples, got {len(data)}")
        return cls(
            tuple(sites[k] for k in data.site_index), data.ranges, data.dopplers, data.directions
        )

    def _canonical(self):
        # sort by site position so that the result does not depend on input order
        order = sorted(range(3), key=lambda k: tuple(self.sites[k].position))
        return TrilaterationInput(
            tuple(self.sites[k] for k in order),
            self.ranges[order],
            self.dopplers[order],
            self.directions[order],
        )


def rangerate_from_doppler(f, f_c):
    if not np.all(np.asarray(f_c) > 0):
        raise ValueError("carrier frequency must be positive")
    return SPEED_OF_LIGHT * np.asarray(f, dtype=float) / (2.0 * np.asarray(f_c, dtype=float))


def _above_ellipsoid(p):
    return (p[0] ** 2 + p[1] ** 2) / WGS84_A**2 + p[2] ** 2 / WGS84_B**2 > 1.0


def intersection_candidates(centers, radii, rel_tol=1e-6):
    """Both points at the given distances from three centres.

    A slightly negative discriminant (noisy ranges) is clamped to zero, in
    which case the two candidates coincide.
    """
    p1, p2, p3 = (np.asarray(c, dtype=float) for c in centers)
    r1, r2, r3 = (float(r) for r in radii)
    base = float(np.linalg.norm(p2 - p1))
    if base == 0.0:
        raise GeometryError("two sites coincide")
    ex = (p2 - p1) / base
    i = float(ex @ (p3 - p1))
    perp = p3 - p1 - i * ex
    j = float(np.linalg.norm(perp))
    if j <= 1e-9 * max(base, float(np.linalg.norm(p3 - p1))):
        raise GeometryError("sites are collinear")
    ey = perp / j
    ez = np.cross(ex, ey)
    u = (r1 * r1 - r2 * r2 + base * base) / (2.0 * base)
    w = (r1 * r1 - r3 * r3 + i * i + j * j) / (2.0 * j) - (i / j) * u
    h2 = r1 * r1 - u * u - w * w
    if h2 < 0.0:
        if h2 < -rel_tol * r1 * r1:
            raise InfeasibleRangesError(
                f"range spheres do not intersect (discriminant {h2:.6g} m^2)"
            )
        h2 = 0.0
    h = np.sqrt(h2)
    foot = p1 + u * ex + w * ey
    return foot + h * ez, foot - h * ez


def trilaterate_position(inp: TrilaterationInput) -> np.ndarray:
    inp = inp._canonical()
    centers = [s.position for s in inp.sites]
    cands = intersection_candidates(centers, inp.ranges)

    def agreement(x):
        los = x[None, :] - np.asarray(centers)
        los /= np.linalg.norm(los, axis=1, keepdims=True)
        return float(np.sum(np.einsum("ij,ij->i", inp.directions, los)))

    scores = [agreement(c) for c in cands]
    if abs(scores[0] - scores[1]) <= 1e-12 * 3:
        above = [_above_ellipsoid(c) for c in cands]
        if above[0] != above[1]:
            return cands[0] if above[0] else cands[1]
    return cands[0] if scores[0] >= scores[1] else cands[1]


def velocity_from_rangerates(position, rates, sites) -> np.ndarray:
    """Solve u_i^T v = rate_i for the three line-of-sight unit vectors."""
    position = np.asarray(position, dtype=float)
    los = position[None, :] - np.array([s.position for s in sites])
    norms = np.linalg.norm(los, axis=1)
    if np.any(norms == 0.0):
        raise GeometryError("position coincides with a site")
    U = los / norms[:, None]
    if np.linalg.cond(U) > 1e12:
        raise GeometryError("line-of-sight vectors are (nearly) linearly dependent")
    return np.linalg.solve(U, np.asarray(rates, dtype=float))


def trilaterate(inp: TrilaterationInput) -> StateVector:
    inp = inp._canonical()
    x = trilaterate_position(inp)
    fc = np.array([s.carrier_frequency for s in inp.sites])
    rates = rangerate_from_doppler(inp.dopplers, fc)
    v = velocity_from_rangerates(x, rates, inp.sites)
    return StateVector(x, v)


def trilaterate_measurements(data: MeasurementSet, sites) -> StateVector:
    return trilaterate(TrilaterationInput.from_measurements(data, sites))

