"""Monostatic radar measurement model: range, line-of-sight direction, Doppler shift.

Range and Doppler noise is additive (Gaussian, Laplace or Cauchy); direction
noise is von Mises-Fisher around the true line of sight.  Every stochastic
function takes an explicit :class:`numpy.random.Generator`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .frames import StateVector

SPEED_OF_LIGHT = 299792458.0  # m/s


class DegenerateGeometryError(ValueError):
    pass


class NoiseFamily(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    CAUCHY = "cauchy"
    NONE = "none"


@dataclass(frozen=True)
class RadarSite:
    position: np.ndarray
    carrier_frequency: float  # Hz
    sigma_range: float = 0.1  # m
    sigma_doppler: float = 10.0  # Hz
    kappa: float = 1e9

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        for name in ("carrier_frequency", "sigma_range", "sigma_doppler", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def doppler_factor(self):
        """Hz of two-way Doppler shift per m/s of radial velocity."""
        return 2.0 * self.carrier_frequency / SPEED_OF_LIGHT


@dataclass
class MeasurementSet:
    """One (range, direction, Doppler) triple per row; ``site_index`` points into a site list."""

    ranges: np.ndarray
    directions: np.ndarray
    dopplers: np.ndarray
    site_index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=float).reshape(-1)
        n = self.ranges.size
        self.directions = np.asarray(self.directions, dtype=float).reshape(n, 3)
        self.dopplers = np.asarray(self.dopplers, dtype=float).reshape(n)
        if self.site_index is None:
            self.site_index = np.arange(n)
        self.site_index = np.asarray(self.site_index, dtype=int).reshape(n)
        if n < 1:
            raise ValueError("a measurement set needs at least one triple")

    def __len__(self):
        return self.ranges.size

    def copy(self):
        return MeasurementSet(
            self.ranges.copy(), self.directions.copy(), self.dopplers.copy(), self.site_index.copy()
        )

    def site_arrays(self, sites):
        """Per-row site quantities: positions (N, 3), carrier, sigma_d, sigma_f, kappa."""
        idx = self.site_index
        return (
            np.array([sites[k].position for k in idx]).reshape(-1, 3),
            np.array([sites[k].carrier_frequency for k in idx]),
            np.array([sites[k].sigma_range for k in idx]),
            np.array([sites[k].sigma_doppler for k in idx]),
            np.array([sites[k].kappa for k in idx]),
        )


def ideal_measurements(state: StateVector, sites, per_site: int = 1) -> MeasurementSet:
    """Noise-free triples, ``per_site`` identical rows for every site."""
    if per_site < 1:
        raise ValueError("per_site must be at least 1")
    x, v = state.position, state.velocity
    ranges, dirs, dopplers = [], [], []
    for k, site in enumerate(sites):
        los = x - site.position
        d = float(np.linalg.norm(los))
        if d == 0.0:
            raise DegenerateGeometryError(f"object coincides with site {k}")
        u = los / d
        ranges.append(d)
        dirs.append(u)
        dopplers.append(site.doppler_factor() * float(u @ v))
    index = np.repeat(np.arange(len(sites)), per_site)
    return MeasurementSet(
        np.asarray(ranges)[index], np.asarray(dirs)[index], np.asarray(dopplers)[index], index
    )


def _orthonormal_frame(mu):
    # two unit vectors completing mu to a right-handed basis
    helper = np.array([1.0, 0.0, 0.0]) if abs(mu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(mu, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(mu, e1)
    return e1, e2


def sample_vmf(mean_direction, kappa, rng: np.random.Generator, size=None):
    """Exact von Mises-Fisher draw(s) on the 2-sphere.

    The cosine to the mean follows the closed-form inverse CDF
    ``w = 1 + log(xi + (1 - xi) exp(-2 kappa)) / kappa``; the azimuth is uniform.
    Returns a unit 3-vector, or an array of shape ``(size, 3)``.
    """
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    mu = np.asarray(mean_direction, dtype=float).reshape(3)
    norm = np.linalg.norm(mu)
    if not abs(norm - 1.0) < 1e-9:
        raise ValueError("mean_direction must be a unit vector")
    mu = mu / norm
    n = 1 if size is None else int(size)

    xi = 1.0 - rng.random(n)  # (0, 1]
    # one_minus_w kept separately: 1 - w underflows in w itself for large kappa
    one_minus_w = -np.log(xi + (1.0 - xi) * math.exp(-2.0 * kappa)) / kappa
    w = 1.0 - one_minus_w
    sin_theta = np.sqrt(np.clip(one_minus_w * (2.0 - one_minus_w), 0.0, None))
    phi = rng.uniform(0.0, 2.0 * math.pi, n)

    e1, e2 = _orthonormal_frame(mu)
    out = (
        w[:, None] * mu
        + (sin_theta * np.cos(phi))[:, None] * e1
        + (sin_theta * np.sin(phi))[:, None] * e2
    )
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if size is None else out


def _additive(family, scale, rng, n):
    if family is NoiseFamily.GAUSSIAN:
        return rng.normal(0.0, scale, n)
    if family is NoiseFamily.LAPLACE:
        # variance 2 b^2 = sigma^2
        return rng.laplace(0.0, scale / math.sqrt(2.0), n)
    if family is NoiseFamily.CAUCHY:
        return scale * rng.standard_cauchy(n)
    raise ValueError(f"no additive noise for family {family!r}")


def apply_noise(ideal: MeasurementSet, family, sites, rng: np.random.Generator) -> MeasurementSet:
    """Perturb an ideal measurement set.

    Ranges and Doppler shifts get additive noise from ``family`` with the
    per-site scales; directions are redrawn from a vMF around the ideal ones.
    Negative ranges can occur under heavy-tailed noise and are kept.
    """
    family = NoiseFamily(family)
    if family is NoiseFamily.NONE:
        return ideal.copy()
    _, _, sigma_d, sigma_f, kappa = ideal.site_arrays(sites)
    n = len(ideal)
    ranges = ideal.ranges + _additive(family, sigma_d, rng, n)
    dopplers = ideal.dopplers + _additive(family, sigma_f, rng, n)
    directions = np.array(
        [sample_vmf(ideal.directions[j], kappa[j], rng) for j in range(n)]
    ).reshape(n, 3)
    return MeasurementSet(ranges, directions, dopplers, ideal.site_index.copy())


def kappa_to_sigma(kappa):
    """Angular standard deviation (rad) equivalent to a vMF concentration."""
    kappa = float(kappa)
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    deficit = 1.0 / (2 * kappa) + 1.0 / (8 * kappa**2) + 1.0 / (8 * kappa**3)
    if not 0.0 < deficit < 1.0:
        raise ValueError(f"kappa={kappa} too small for the series approximation")
    return math.sqrt(-2.0 * math.log1p(-deficit))
