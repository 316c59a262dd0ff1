"""Analytic circular-orbit propagation, link geometry and free-space pathloss.

The satellite flies a circular Keplerian orbit (no J2, no drag) over a
spherical, uniformly rotating earth. Positions are earth-centered
earth-fixed (ECEF) metres; the returned velocity is the ECEF-frame velocity,
i.e. it includes the transport term from earth rotation, which is the
relevant quantity for Doppler against a ground-fixed UE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MU_EARTH = 3.986004418e14        # m^3/s^2
EARTH_RADIUS = 6371.0e3          # m, spherical model
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s
SPEED_OF_LIGHT = 299792458.0     # m/s

ANGLE_EPS = 1e-3  # open-interval clamp for (0, pi) angle ranges


@dataclass(frozen=True)
class OrbitConfig:
    altitude: float                 # m above earth_radius
    inclination: float              # rad
    raan: float = 0.0               # rad, right ascension of ascending node
    initial_phase: float = 0.0      # rad, argument along the orbit at t = 0
    mu: float = MU_EARTH
    earth_radius: float = EARTH_RADIUS
    earth_rotation_rate: float = EARTH_ROTATION_RATE

    def __post_init__(self) -> None:
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")
        if not 0.0 <= self.inclination <= math.pi:
            raise ValueError("inclination must lie in [0, pi]")

    @property
    def radius(self) -> float:
        return self.earth_radius + self.altitude

    @property
    def mean_motion(self) -> float:
        return math.sqrt(self.mu / self.radius**3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.mean_motion

    def plane_basis(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal in-plane basis (ascending node direction, 90 deg ahead)."""
        co, so = math.cos(self.raan), math.sin(self.raan)
        ci, si = math.cos(self.inclination), math.sin(self.inclination)
        p = np.array([co, so, 0.0])
        q = np.array([-so * ci, co * ci, si])
        return p, q


@dataclass(frozen=True)
class GeometrySample:
    """Line-of-sight geometry between satellite and UE at one instant.

    ``sat_frame``/``ue_frame`` hold the local array axes as rows (x, y, z in
    ECEF coordinates); the planar-array boresight is the local z axis.
    """

    slant_distance: float
    elevation: float
    sat_velocity: np.ndarray
    boresight_aod: tuple[float, float]
    boresight_aoa: tuple[float, float]
    sat_frame: np.ndarray
    ue_frame: np.ndarray


def inertial_state(cfg: OrbitConfig, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Position/velocity on the circular orbit in the inertial frame."""
    p, q = cfg.plane_basis()
    nu = cfg.initial_phase + cfg.mean_motion * t
    r = cfg.radius * (math.cos(nu) * p + math.sin(nu) * q)
    v = cfg.radius * cfg.mean_motion * (-math.sin(nu) * p + math.cos(nu) * q)
    return r, v


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def propagate(cfg: OrbitConfig, t: float) -> tuple[np.ndarray, np.ndarray]:
    """ECEF position and ECEF-frame velocity at time t >= 0."""
    if t < 0:
        raise ValueError("t must be non-negative")
    r_i, v_i = inertial_state(cfg, t)
    rot = _rot_z(-cfg.earth_rotation_rate * t)
    r = rot @ r_i
    # d/dt [R(-wt) r_i] = R(-wt) v_i - w x (R(-wt) r_i)
    omega = np.array([0.0, 0.0, cfg.earth_rotation_rate])
    v = rot @ v_i - np.cross(omega, r)
    return r, v


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("zero-length vector has no direction")
    return v / n


def _direction_to_angles(u: np.ndarray) -> tuple[float, float]:
    """Map a unit direction in array-frame coordinates to planar-array angles.

    Inverts the steering-vector phase model: the x-axis phase step carries
    sin(phi)cos(theta) and the y-axis step carries cos(phi).
    """
    phi = math.acos(float(np.clip(u[1], -1.0, 1.0)))
    s = math.sin(phi)
    theta = math.pi / 2 if s < 1e-12 else math.acos(float(np.clip(u[0] / s, -1.0, 1.0)))
    theta = min(max(theta, ANGLE_EPS), math.pi - ANGLE_EPS)
    phi = min(max(phi, ANGLE_EPS), math.pi - ANGLE_EPS)
    return theta, phi


def _orthonormal_frame(boresight: np.ndarray, x_hint: np.ndarray) -> np.ndarray:
    """Right-handed frame (rows x, y, z) with z = boresight, x along the hint."""
    e_z = _unit(boresight)
    x = x_hint - np.dot(x_hint, e_z) * e_z
    if np.linalg.norm(x) < 1e-9:
        # hint parallel to boresight: fall back to any perpendicular axis
        trial = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(trial, e_z)) > 0.9:
            trial = np.array([0.0, 1.0, 0.0])
        x = trial - np.dot(trial, e_z) * e_z
    e_x = _unit(x)
    e_y = np.cross(e_z, e_x)
    return np.vstack([e_x, e_y, e_z])


def geometry(sat: np.ndarray, sat_vel: np.ndarray, ue: np.ndarray) -> GeometrySample:
    """Slant range, elevation and boresight angles for one satellite/UE pair.

    The satellite array boresight points along the line of sight toward the
    UE (earth-fixed-cell beam tracking, refreshed when this is called at a
    control-cycle start); the UE array boresight is the local zenith.
    """
    sat = np.asarray(sat, dtype=float)
    ue = np.asarray(ue, dtype=float)
    los = sat - ue
    slant = float(np.linalg.norm(los))
    if slant < 1e-9:
        raise ValueError("satellite and UE positions coincide")
    up = _unit(ue)
    elevation = math.asin(float(np.clip(np.dot(los / slant, up), -1.0, 1.0)))

    sat_frame = _orthonormal_frame(-los, np.asarray(sat_vel, dtype=float))
    east = np.cross(np.array([0.0, 0.0, 1.0]), up)
    if np.linalg.norm(east) < 1e-9:
        east = np.array([1.0, 0.0, 0.0])
    ue_frame = _orthonormal_frame(up, east)

    aod = _direction_to_angles(sat_frame @ _unit(-los))
    aoa = _direction_to_angles(ue_frame @ _unit(los))
    return GeometrySample(
        slant_distance=slant,
        elevation=elevation,
        sat_velocity=np.asarray(sat_vel, dtype=float),
        boresight_aod=aod,
        boresight_aoa=aoa,
        sat_frame=sat_frame,
        ue_frame=ue_frame,
    )


def pathloss(distance: float, carrier_freq: float) -> float:
    """Free-space path gain (lambda / 4 pi d)^2 as a linear factor."""
    if distance <= 0 or carrier_freq <= 0:
        raise ValueError("distance and carrier frequency must be positive")
    wavelength = SPEED_OF_LIGHT / carrier_freq
    return (wavelength / (4.0 * math.pi * distance)) ** 2


def in_service(elevation: float, min_elevation: float = math.pi / 6) -> bool:
    """Service gate: strictly above the minimum elevation angle."""
    return elevation > min_elevation


def overhead_config(
    ue: np.ndarray,
    altitude: float,
    inclination: float,
    t_zenith: float,
    mu: float = MU_EARTH,
    earth_radius: float = EARTH_RADIUS,
    earth_rotation_rate: float = EARTH_ROTATION_RATE,
) -> OrbitConfig:
    """Orbit whose ground track crosses directly over ``ue`` at time ``t_zenith``.

    Solves for the RAAN and phase that place the satellite at the UE's zenith
    (in the inertial frame, accounting for earth rotation up to t_zenith).
    Requires the inclination to cover the UE latitude.
    """
    ue = np.asarray(ue, dtype=float)
    u_hat = _rot_z(earth_rotation_rate * t_zenith) @ _unit(ue)
    lat = math.asin(float(np.clip(u_hat[2], -1.0, 1.0)))
    lon = math.atan2(u_hat[1], u_hat[0])
    if abs(lat) > inclination:
        raise ValueError("inclination does not cover the UE latitude")
    if inclination < 1e-9:
        raan = 0.0  # equatorial orbit, any node works for lat = 0
    else:
        # plane normal is orthogonal to the zenith direction:
        # sin(i) cos(lat) sin(raan - lon) = -cos(i) sin(lat)
        arg = -math.tan(lat) / math.tan(inclination)
        raan = lon + math.asin(float(np.clip(arg, -1.0, 1.0)))
    cfg = OrbitConfig(
        altitude=altitude,
        inclination=inclination,
        raan=raan,
        initial_phase=0.0,
        mu=mu,
        earth_radius=earth_radius,
        earth_rotation_rate=earth_rotation_rate,
    )
    p, q = cfg.plane_basis()
    nu_z = math.atan2(float(np.dot(u_hat, q)), float(np.dot(u_hat, p)))
    phase = nu_z - cfg.mean_motion * t_zenith
    return OrbitConfig(
        altitude=altitude,
        inclination=inclination,
        raan=raan,
        initial_phase=phase,
        mu=mu,
        earth_radius=earth_radius,
        earth_rotation_rate=earth_rotation_rate,
    )


def service_window(
    cfg: OrbitConfig,
    ue: np.ndarray,
    min_elevation: float,
    t_center: float,
    span: float = 600.0,
    coarse_step: float = 1.0,
) -> tuple[float, float]:
    """(rise, set) times of the in-service interval containing ``t_center``."""
    ue = np.asarray(ue, dtype=float)

    def elev(t: float) -> float:
        pos, vel = propagate(cfg, t)
        return geometry(pos, vel, ue).elevation

    if not in_service(elev(t_center), min_elevation):
        raise ValueError("t_center is not inside a service interval")

    def bisect(lo: float, hi: float) -> float:
        # elevation crosses min_elevation exactly once in (lo, hi)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if in_service(elev(mid), min_elevation):
                hi = mid
            else:
                lo = mid
        return hi

    t = t_center
    while t - coarse_step >= 0 and in_service(elev(t - coarse_step), min_elevation):
        t -= coarse_step
    rise = max(t - coarse_step, 0.0)
    rise = bisect(rise, t) if rise < t and not in_service(elev(rise), min_elevation) else rise

    t = t_center
    while in_service(elev(t + coarse_step), min_elevation):
        t += coarse_step
    lo, hi = t, t + coarse_step
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if in_service(elev(mid), min_elevation):
            lo = mid
        else:
            hi = mid
    return rise, lo
