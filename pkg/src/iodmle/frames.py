"""Orbital elements, geodetic coordinates and Cartesian states.

ECEF and the inertial frame are taken to coincide at the measurement
instant, so site positions and object states share one Cartesian frame.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

MU_EARTH = 3.986004418e14  # m^3/s^2 (WGS-84)
WGS84_A = 6378137.0  # m
WGS84_F = 1.0 / 298.257223563
WGS84_B = WGS84_A * (1.0 - WGS84_F)
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)


class KeplerConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class KeplerianElements:
    """Classical elements; lengths in metres, angles in radians."""

    semi_major_axis: float
    eccentricity: float
    inclination: float
    raan: float
    arg_perigee: float
    mean_anomaly: float = 0.0

    def __post_init__(self):
        if not self.semi_major_axis > 0:
            raise ValueError(f"semi_major_axis must be positive, got {self.semi_major_axis}")
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.eccentricity}")
        angles = (self.inclination, self.raan, self.arg_perigee, self.mean_anomaly)
        if not all(math.isfinite(a) for a in angles):
            raise ValueError("angles must be finite")

    @classmethod
    def from_table(cls, a_km, e, i_deg, raan_deg, argp_deg, mean_anomaly_deg=0.0):
        """Build from kilometre / degree values as tabulated in catalogues."""
        return cls(
            a_km * 1e3,
            e,
            math.radians(i_deg),
            math.radians(raan_deg),
            math.radians(argp_deg),
            math.radians(mean_anomaly_deg),
        )


@dataclass(frozen=True)
class GeodeticCoord:
    latitude: float  # rad
    longitude: float  # rad
    altitude: float = 0.0  # m

    def __post_init__(self):
        if abs(self.latitude) > math.pi / 2 + 1e-15:
            raise ValueError(f"|latitude| must not exceed pi/2, got {self.latitude}")
        # normalise longitude to (-pi, pi]
        lon = math.remainder(self.longitude, 2 * math.pi)
        if lon == -math.pi:
            lon = math.pi
        object.__setattr__(self, "longitude", lon)

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, altitude=0.0):
        return cls(math.radians(lat_deg), math.radians(lon_deg), altitude)


@dataclass(frozen=True)
class StateVector:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        vel = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise ValueError("state components must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    def as_array(self):
        return np.concatenate([self.position, self.velocity])


def solve_kepler_equation(mean_anomaly, eccentricity, tol=1e-12, max_iter=50):
    """Eccentric anomaly E from M = E - e sin E by Newton iteration from E0 = M."""
    if not 0.0 <= eccentricity < 1.0:
        raise ValueError(f"eccentricity must lie in [0, 1), got {eccentricity}")
    M = float(mean_anomaly)
    e = float(eccentricity)
    E = M
    for _ in range(max_iter):
        f = E - e * math.sin(E) - M
        if abs(f) <= tol:
            return E
        E -= f / (1.0 - e * math.cos(E))
    if abs(E - e * math.sin(E) - M) <= tol:
        return E
    raise KeplerConvergenceError(
        f"Kepler iteration did not converge for M={M}, e={e} after {max_iter} steps"
    )


def _rot_x(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, s], [0.0, -s, c]])


def _rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def kepler_to_cartesian(elements: KeplerianElements, mu: float = MU_EARTH) -> StateVector:
    if not mu > 0:
        raise ValueError("mu must be positive")
    a, e = elements.semi_major_axis, elements.eccentricity
    E = solve_kepler_equation(elements.mean_anomaly, e)
    cos_E, sin_E = math.cos(E), math.sin(E)
    root = math.sqrt(1.0 - e * e)
    r = a * (1.0 - e * cos_E)

    r_pf = np.array([a * (cos_E - e), a * root * sin_E, 0.0])
    v_pf = math.sqrt(mu * a) / r * np.array([-sin_E, root * cos_E, 0.0])

    # perifocal -> inertial: R_z(-raan) R_x(-i) R_z(-argp)
    rot = _rot_z(-elements.raan) @ _rot_x(-elements.inclination) @ _rot_z(-elements.arg_perigee)
    return StateVector(rot @ r_pf, rot @ v_pf)


def geodetic_to_ecef(coord: GeodeticCoord) -> np.ndarray:
    sin_lat, cos_lat = math.sin(coord.latitude), math.cos(coord.latitude)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    h = coord.altitude
    return np.array(
        [
            (n + h) * cos_lat * math.cos(coord.longitude),
            (n + h) * cos_lat * math.sin(coord.longitude),
            (n * (1.0 - WGS84_E2) + h) * sin_lat,
        ]
    )


def ecef_to_geodetic(point) -> GeodeticCoord:
    """Inverse of :func:`geodetic_to_ecef` (Bowring start, Newton-refined latitude)."""
    x, y, z = (float(c) for c in point)
    lon = math.atan2(y, x)
    p = math.hypot(x, y)
    if p < 1e-9:
        lat = math.copysign(math.pi / 2, z)
        return GeodeticCoord(lat, lon, abs(z) - WGS84_B)
    ep2 = WGS84_E2 / (1.0 - WGS84_E2)
    theta = math.atan2(z * WGS84_A, p * WGS84_B)
    lat = math.atan2(
        z + ep2 * WGS84_B * math.sin(theta) ** 3,
        p - WGS84_E2 * WGS84_A * math.cos(theta) ** 3,
    )
    for _ in range(5):
        sin_lat = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
        lat = math.atan2(z + WGS84_E2 * n * sin_lat, p)
    sin_lat, cos_lat = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * sin_lat * sin_lat)
    if abs(cos_lat) > 1e-3:
        alt = p / cos_lat - n
    else:
        alt = z / sin_lat - n * (1.0 - WGS84_E2)
    return GeodeticCoord(lat, lon, alt)


def elevation_angle(site_position, target) -> float:
    """Elevation of ``target`` above the local ellipsoidal horizon at ``site_position``."""
    site = np.asarray(site_position, dtype=float)
    geo = ecef_to_geodetic(site)
    up = np.array(
        [
            math.cos(geo.latitude) * math.cos(geo.longitude),
            math.cos(geo.latitude) * math.sin(geo.longitude),
            math.sin(geo.latitude),
        ]
    )
    los = np.asarray(target, dtype=float) - site
    return math.asin(float(up @ los) / float(np.linalg.norm(los)))


def check_visibility(site_positions, target, min_elevation=0.0) -> list[int]:
    """Warn (never raise) about sites that see ``target`` below ``min_elevation``.

    Returns the indices of the offending sites.
    """
    hidden = [
        k for k, site in enumerate(site_positions)
        if elevation_angle(site, target) <= min_elevation
    ]
    if hidden:
        warnings.warn(f"target below the horizon of site(s) {hidden}", stacklevel=2)
    return hidden
