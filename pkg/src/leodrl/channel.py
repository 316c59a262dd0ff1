"""UPA steering vectors and the per-slot, per-RB multipath channel matrix.

The downlink channel for slot n and RB m is a sum over L paths of

    alpha_l * exp(j 2 pi [n T_s v_l - (m / T_s) tau_l]) * a_r a_t^H

with unit-norm transmit/receive steering vectors built as the Kronecker
product of the two linear-array factors of each planar array. The multipath
generator is a simplified Rician parametric model (dominant line-of-sight
path plus complex-normal scatter paths with Laplacian angle offsets and a
truncated-exponential delay profile); all of its knobs live in
:class:`ChannelConfig` so alternative calibrations are a config edit away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numkit import kron_vec
from .orbit import GeometrySample

ANGLE_EPS = 1e-3


@dataclass(frozen=True)
class ArrayGeometry:
    """Antenna counts and spacings of the transmit/receive planar arrays."""

    nt_x: int
    nt_y: int
    nr_x: int
    nr_y: int
    d_t: float
    d_r: float
    wavelength: float

    def __post_init__(self) -> None:
        if min(self.nt_x, self.nt_y, self.nr_x, self.nr_y) < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.d_t <= 0 or self.d_r <= 0 or self.wavelength <= 0:
            raise ValueError("spacings and wavelength must be positive")

    @property
    def n_t(self) -> int:
        return self.nt_x * self.nt_y

    @property
    def n_r(self) -> int:
        return self.nr_x * self.nr_y


@dataclass
class PathParams:
    alpha: complex            # complex gain
    doppler: float            # Hz
    delay: float              # s, relative to the line-of-sight path
    aod: tuple[float, float]  # (theta, phi) at the transmit array
    aoa: tuple[float, float]  # (theta, phi) at the receive array

    def __post_init__(self) -> None:
        if self.delay < 0:
            raise ValueError("delay must be non-negative")
        for ang in (*self.aod, *self.aoa):
            if not 0.0 < ang < math.pi:
                raise ValueError("path angles must lie in (0, pi)")


@dataclass
class MultipathProfile:
    """Paths of one channel realization; path 0 is the line-of-sight path."""

    paths: list[PathParams]
    symbol_duration: float

    def __post_init__(self) -> None:
        if not self.paths:
            raise ValueError("need at least one path")
        if self.symbol_duration <= 0:
            raise ValueError("symbol duration must be positive")


@dataclass(frozen=True)
class ChannelConfig:
    num_paths: int = 4
    rician_k_db: float = 10.0
    angle_spread: float = math.radians(5.0)   # Laplacian scale of angle offsets
    delay_spread: float = 100e-9              # cap of the truncated-exponential delays
    symbol_duration: float = 66.7e-6          # 15 kHz numerology OFDM symbol
    doppler_scale: float = 1.0                # 0 freezes phase evolution across slots
    pointing_bias: float = 0.0                # quasi-static cluster offset bound, rad

    def __post_init__(self) -> None:
        if self.num_paths < 1:
            raise ValueError("need at least one path")
        if self.delay_spread < 0 or self.angle_spread < 0 or self.pointing_bias < 0:
            raise ValueError("spreads must be non-negative")

    @property
    def rician_k(self) -> float:
        return 10.0 ** (self.rician_k_db / 10.0)


def _steering(n_x: int, n_y: int, spacing: float, wavelength: float,
              theta: float, phi: float) -> np.ndarray:
    if not 0.0 <= theta <= math.pi or not 0.0 <= phi <= math.pi:
        raise ValueError("steering angles must lie in [0, pi]")
    k = 2.0 * math.pi / wavelength * spacing
    step_x = k * math.sin(phi) * math.cos(theta)
    step_y = k * math.cos(phi)
    ax = np.exp(1j * step_x * np.arange(n_x)) / math.sqrt(n_x)
    ay = np.exp(1j * step_y * np.arange(n_y)) / math.sqrt(n_y)
    return kron_vec(ax, ay)


def steering_tx(g: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
    """Unit-norm transmit steering vector of length N_t."""
    return _steering(g.nt_x, g.nt_y, g.d_t, g.wavelength, theta, phi)


def steering_rx(g: ArrayGeometry, theta: float, phi: float) -> np.ndarray:
    """Unit-norm receive steering vector of length N_r."""
    return _steering(g.nr_x, g.nr_y, g.d_r, g.wavelength, theta, phi)


def _angles_to_direction(theta: float, phi: float) -> np.ndarray:
    """Unit direction in array-frame coordinates for given planar-array angles."""
    ux = math.sin(phi) * math.cos(theta)
    uy = math.cos(phi)
    uz = math.sqrt(max(0.0, 1.0 - ux * ux - uy * uy))
    return np.array([ux, uy, uz])


def _clip_angle(a: float) -> float:
    return min(max(a, ANGLE_EPS), math.pi - ANGLE_EPS)


def _truncated_exp(rng: np.random.Generator, cap: float, scale: float) -> float:
    if cap <= 0:
        return 0.0
    u = rng.random()
    return float(-scale * math.log1p(-u * (1.0 - math.exp(-cap / scale))))


def sample_paths(
    rng: np.random.Generator,
    geo: GeometrySample,
    cfg: ChannelConfig,
    arrays: ArrayGeometry,
    cluster_offset: tuple[np.ndarray, np.ndarray] | None = None,
) -> MultipathProfile:
    """Draw one multipath realization around the current link geometry.

    Path 0 is the deterministic dominant path at the boresight angles
    (displaced by ``cluster_offset`` when the propagation cluster does not
    sit on the geometric line of sight) with amplitude sqrt(K/(K+1)); the
    remaining paths share the residual power 1/(K+1) with complex-normal
    gains, so E[sum |alpha|^2] = 1. Per-path Doppler is the satellite
    velocity projected on the path direction (reconstructed in the satellite
    array frame) over wavelength.
    """
    k_lin = cfg.rician_k
    n_scatter = cfg.num_paths - 1
    speed_term = geo.sat_velocity / arrays.wavelength

    def doppler_for(aod: tuple[float, float]) -> float:
        direction = geo.sat_frame.T @ _angles_to_direction(*aod)
        return cfg.doppler_scale * float(np.dot(speed_term, direction))

    if cluster_offset is None:
        center_aod, center_aoa = geo.boresight_aod, geo.boresight_aoa
    else:
        off_aod, off_aoa = cluster_offset
        center_aod = (_clip_angle(geo.boresight_aod[0] + off_aod[0]),
                      _clip_angle(geo.boresight_aod[1] + off_aod[1]))
        center_aoa = (_clip_angle(geo.boresight_aoa[0] + off_aoa[0]),
                      _clip_angle(geo.boresight_aoa[1] + off_aoa[1]))

    paths = [
        PathParams(
            alpha=complex(math.sqrt(k_lin / (k_lin + 1.0)), 0.0),
            doppler=doppler_for(center_aod),
            delay=0.0,
            aod=center_aod,
            aoa=center_aoa,
        )
    ]
    if n_scatter > 0:
        sigma2 = 1.0 / ((k_lin + 1.0) * n_scatter)
        for _ in range(n_scatter):
            re, im = rng.standard_normal(2)
            alpha = complex(re, im) * math.sqrt(sigma2 / 2.0)
            offsets = rng.laplace(0.0, cfg.angle_spread, size=4)
            aod = (_clip_angle(center_aod[0] + offsets[0]),
                   _clip_angle(center_aod[1] + offsets[1]))
            aoa = (_clip_angle(center_aoa[0] + offsets[2]),
                   _clip_angle(center_aoa[1] + offsets[3]))
            delay = _truncated_exp(rng, cfg.delay_spread, cfg.delay_spread / 3.0)
            paths.append(PathParams(alpha, doppler_for(aod), delay, aod, aoa))
    return MultipathProfile(paths, cfg.symbol_duration)


def _path_outers(profile: MultipathProfile, g: ArrayGeometry) -> np.ndarray:
    return np.stack([
        np.outer(steering_rx(g, *p.aoa), steering_tx(g, *p.aod).conj())
        for p in profile.paths
    ])


def channel_matrix(profile: MultipathProfile, g: ArrayGeometry, n: int, m: int) -> np.ndarray:
    """Channel matrix H (N_r x N_t) at slot n, RB m."""
    if n < 0 or m < 0:
        raise ValueError("slot and RB indices must be non-negative")
    t_s = profile.symbol_duration
    h = np.zeros((g.n_r, g.n_t), dtype=complex)
    for p in profile.paths:
        phase = np.exp(2j * math.pi * (n * t_s * p.doppler - (m / t_s) * p.delay))
        h += p.alpha * phase * np.outer(steering_rx(g, *p.aoa), steering_tx(g, *p.aod).conj())
    return h


def channel_matrices(profile: MultipathProfile, g: ArrayGeometry, n: int, num_rbs: int) -> np.ndarray:
    """Channel matrices for all RBs of one slot, shape (num_rbs, N_r, N_t)."""
    if n < 0 or num_rbs < 1:
        raise ValueError("need n >= 0 and at least one RB")
    t_s = profile.symbol_duration
    alphas = np.array([p.alpha for p in profile.paths])
    dopplers = np.array([p.doppler for p in profile.paths])
    delays = np.array([p.delay for p in profile.paths])
    m_idx = np.arange(num_rbs)
    # (L, M) per-path per-RB phases
    phases = np.exp(2j * math.pi * (n * t_s * dopplers[:, None] - np.outer(delays, m_idx) / t_s))
    outers = _path_outers(profile, g)  # (L, N_r, N_t)
    return np.einsum("l,lm,lrt->mrt", alphas, phases, outers, optimize=True)
