"""Reference scenario: five LEO objects and three high-latitude radar sites."""
from __future__ import annotations

from .frames import GeodeticCoord, KeplerianElements, geodetic_to_ecef
from .measmodel import RadarSite

# a [km], e, i [deg], RAAN [deg], argument of perigee [deg]; mean anomaly 0
OBJECT_TABLE = (
    (6913.9278, 0.0106, 97.1377, 66.7240, 79.0900),
    (6886.5427, 0.0003, 97.4457, 68.2327, 72.8300),
    (6886.5577, 0.0002, 97.4460, 67.7949, 74.2700),
    (7151.1996, 0.0020, 95.9746, 68.1057, 77.8000),
    (6860.4158, 0.0076, 93.9043, 64.4680, 75.0700),
)

# latitude [deg], longitude [deg], carrier frequency [Hz]; altitude 0
SITE_TABLE = (
    (72.986276, 40.916634, 1215e6),
    (74.986276, 48.916634, 1280e6),
    (75.986276, 38.916634, 1333e6),
)

DEFAULT_SIGMA_RANGE = 1e-1  # m
DEFAULT_SIGMA_DOPPLER = 10.0  # Hz
DEFAULT_KAPPA = 1e9


def reference_objects():
    return [KeplerianElements.from_table(*row) for row in OBJECT_TABLE]


def reference_site_coords():
    return [(GeodeticCoord.from_degrees(lat, lon), fc) for lat, lon, fc in SITE_TABLE]


def make_sites(
    coords=None,
    sigma_range=DEFAULT_SIGMA_RANGE,
    sigma_doppler=DEFAULT_SIGMA_DOPPLER,
    kappa=DEFAULT_KAPPA,
):
    """Radar sites with one shared set of noise parameters."""
    coords = reference_site_coords() if coords is None else coords
    return [
        RadarSite(geodetic_to_ecef(geo), fc, sigma_range, sigma_doppler, kappa)
        for geo, fc in coords
    ]
