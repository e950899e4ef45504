"""Keplerian two-body propagation and a tilted-dipole geomagnetic field model.

The field is expressed in a local orbital frame as a function of the argument
of latitude ``eta = true_anomaly + argp``: the in-plane components oscillate
at twice the orbital phase, the out-of-plane component is ``-cos(i)`` times
the dipole factor ``-Me / r^3``.

Axis convention (not uniquely fixed by the model itself, so it is pinned
here): x is the along-track-like axis carrying the sin(2*eta) term, y carries
the cos(2*eta) term, z completes the triad and holds the -cos(i) component.

Units are SI internally (tesla, meters inside the field law); orbital radii
and semi-major axes are carried in km and converted at the point of use.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FrameError

EARTH_MU_KM3_S2 = 398600.4418  # WGS-84
EARTH_RADIUS_KM = 6378.137     # WGS-84
GAUSS_CM3_TO_T_M3 = 1e-10

TWO_PI = 2.0 * math.pi

ORBITAL = "orbital"
BODY = "body"

_FRAMES = (ORBITAL, BODY)


@dataclass(frozen=True)
class DipoleConstants:
    """Physical constants of the field model and the two-body propagation.

    ``me_t_m3`` is the Earth dipole strength in T*m^3; the conventional
    gauss*cm^3 figure is converted once at this boundary (1 gauss*cm^3 =
    1e-10 T*m^3) and all field math downstream stays in tesla and meters.
    """

    me_t_m3: float = 8.1e25 * GAUSS_CM3_TO_T_M3
    mu_km3_s2: float = EARTH_MU_KM3_S2

    def __post_init__(self):
        if not (math.isfinite(self.me_t_m3) and self.me_t_m3 > 0.0):
            raise ValueError(f"dipole strength must be positive, got {self.me_t_m3}")
        if not (math.isfinite(self.mu_km3_s2) and self.mu_km3_s2 > 0.0):
            raise ValueError(f"gravitational parameter must be positive, got {self.mu_km3_s2}")


@dataclass(frozen=True)
class FieldSample:
    """Geomagnetic field vector with its frame tag and timestamp.

    b: field vector in tesla, frame: "orbital" or "body", t: simulation
    time in seconds. For valid LEO radii the magnitude lands in roughly
    [1e-6, 1e-3] T; synthetic samples used in tests may fall outside.
    """

    b: np.ndarray
    frame: str
    t: float

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if b.shape != (3,):
            raise ValueError(f"field vector must have shape (3,), got {b.shape}")
        if not np.all(np.isfinite(b)):
            raise ValueError("field vector has non-finite components")
        if self.frame not in _FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}, expected one of {_FRAMES}")
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class OrbitalElements:
    """Classical Keplerian elements; angles in radians, normalized to [0, 2pi).

    A perigee at or below the Earth radius is warned about but accepted: the
    shipped sun-synchronous preset has a perigee only a few km above it.
    """

    a_km: float
    e: float
    inclination: float
    raan: float
    argp: float
    mean_anomaly: float

    def __post_init__(self):
        for name in ("a_km", "e", "inclination", "raan", "argp", "mean_anomaly"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"orbital element {name} is not finite")
        if self.a_km <= 0.0:
            raise ValueError(f"semi-major axis must be positive, got {self.a_km} km")
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.e}")
        for name in ("inclination", "raan", "argp", "mean_anomaly"):
            object.__setattr__(self, name, getattr(self, name) % TWO_PI)
        perigee = self.a_km * (1.0 - self.e)
        if perigee <= EARTH_RADIUS_KM:
            warnings.warn(
                f"perigee radius {perigee:.1f} km is at or below the Earth radius "
                f"({EARTH_RADIUS_KM} km)",
                stacklevel=2,
            )


def solve_kepler(mean_anomaly: float, e: float) -> float:
    """Solve E - e*sin(E) = M for the eccentric anomaly E.

    Newton iteration seeded at E = M with the analytic derivative
    1 - e*cos(E); residual tolerance 1e-12 rad, 50 iteration cap. The mean
    anomaly is reduced modulo 2pi first so the residual is not swamped by
    cancellation for large M; the returned E lies in the matching principal
    interval.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must lie in [0, 1), got {e}")
    if not math.isfinite(mean_anomaly):
        raise ValueError("mean anomaly is not finite")
    m = mean_anomaly % TWO_PI
    ecc = e
    big_e = m
    for _ in range(50):
        f = big_e - ecc * math.sin(big_e) - m
        if abs(f) < 1e-12:
            return big_e
        big_e -= f / (1.0 - ecc * math.cos(big_e))
    raise RuntimeError(
        f"Kepler solve did not converge in 50 iterations (M={m}, e={ecc})"
    )


def true_anomaly(eccentric_anomaly: float, e: float) -> float:
    """Quadrant-safe conversion from eccentric to true anomaly.

    Implements tan(theta/2) = sqrt((1+e)/(1-e)) * tan(E/2) via atan2.
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must lie in [0, 1), got {e}")
    half = 0.5 * eccentric_anomaly
    theta = 2.0 * math.atan2(
        math.sqrt(1.0 + e) * math.sin(half),
        math.sqrt(1.0 - e) * math.cos(half),
    )
    return theta % TWO_PI


def orbit_radius(a_km: float, e: float, theta: float) -> float:
    """Conic radius r = a*(1-e^2) / (1 + e*cos(theta)) in km."""
    return a_km * (1.0 - e * e) / (1.0 + e * math.cos(theta))


def mean_motion(elements: OrbitalElements, consts: DipoleConstants | None = None) -> float:
    """Mean motion n = sqrt(mu / a^3) in rad/s."""
    consts = consts if consts is not None else DipoleConstants()
    return math.sqrt(consts.mu_km3_s2 / elements.a_km**3)


def orbital_period(elements: OrbitalElements, consts: DipoleConstants | None = None) -> float:
    """Orbital period 2*pi/n in seconds."""
    return TWO_PI / mean_motion(elements, consts)


def dipole_field(
    elements: OrbitalElements,
    theta: float,
    r_km: float,
    consts: DipoleConstants | None = None,
    t: float = 0.0,
) -> FieldSample:
    """Tilted-dipole field in the orbital frame at true anomaly theta, radius r.

    B = Dm * [ (3/2) sin(i) sin(2 eta),
              -(3/2) sin(i) (cos(2 eta) - 1/3),
              -cos(i) ]
    with eta = theta + argp and Dm = -Me / r^3 (r in meters).
    """
    if r_km <= 0.0:
        raise ValueError(f"orbit radius must be positive, got {r_km} km")
    consts = consts if consts is not None else DipoleConstants()
    eta = theta + elements.argp
    dm = -consts.me_t_m3 / (r_km * 1000.0) ** 3
    sin_i = math.sin(elements.inclination)
    b = np.array(
        [
            dm * 1.5 * sin_i * math.sin(2.0 * eta),
            -dm * 1.5 * sin_i * (math.cos(2.0 * eta) - 1.0 / 3.0),
            -dm * math.cos(elements.inclination),
        ]
    )
    return FieldSample(b, ORBITAL, t)


def field_at_time(
    elements: OrbitalElements,
    consts: DipoleConstants | None = None,
    t: float = 0.0,
) -> FieldSample:
    """Orbital-frame field at simulation time t.

    Composes mean motion, the Kepler solve, the true-anomaly conversion and
    the conic radius; deterministic and periodic in t with the orbital period.
    """
    consts = consts if consts is not None else DipoleConstants()
    m = elements.mean_anomaly + mean_motion(elements, consts) * t
    big_e = solve_kepler(m, elements.e)
    theta = true_anomaly(big_e, elements.e)
    r_km = orbit_radius(elements.a_km, elements.e, theta)
    return dipole_field(elements, theta, r_km, consts, t=t)


def field_function(elements: OrbitalElements, consts: DipoleConstants | None = None):
    """Bind elements and constants into a callable t -> orbital FieldSample."""
    consts = consts if consts is not None else DipoleConstants()

    def field_at(t: float) -> FieldSample:
        return field_at_time(elements, consts, t)

    return field_at


def rotation_matrix(q: np.ndarray) -> np.ndarray:
    """Direction cosine matrix of the orbital-to-body quaternion (scalar-last).

    Rotates orbital-frame vectors into body components: v_body = R(q) @ v_orb.
    """
    q = np.asarray(q, dtype=float)
    q1, q2, q3, q4 = q / math.sqrt(float(np.dot(q, q)))
    return np.array(
        [
            [
                q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4,
                2.0 * (q1 * q2 + q3 * q4),
                2.0 * (q1 * q3 - q2 * q4),
            ],
            [
                2.0 * (q1 * q2 - q3 * q4),
                -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4,
                2.0 * (q2 * q3 + q1 * q4),
            ],
            [
                2.0 * (q1 * q3 + q2 * q4),
                2.0 * (q2 * q3 - q1 * q4),
                -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4,
            ],
        ]
    )


def to_body_frame(q: np.ndarray, sample: FieldSample) -> FieldSample:
    """Rotate an orbital-frame sample into the body frame of quaternion q."""
    if sample.frame != ORBITAL:
        raise FrameError(f"expected an orbital-frame sample, got {sample.frame!r}")
    q = np.asarray(q, dtype=float)
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"quaternion norm {norm} is not unit within 1e-6")
    return FieldSample(rotation_matrix(q) @ sample.b, BODY, sample.t)
