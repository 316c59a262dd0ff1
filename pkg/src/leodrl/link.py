"""Link budget, per-RB SNR and Shannon rate, RB grouping and beam offsets.

SNR of one RB is P_eff * L_n * |w_r^H H w_t|^2 / (N_r * noise), where the
beam vectors are steering vectors at the configured pointing angles and
P_eff folds the transmit power together with both antenna gains (keeping
the steering vectors unit-norm). Allocation operates on a fixed partition
of the RB pool into groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ArrayGeometry, steering_rx, steering_tx
from .orbit import SPEED_OF_LIGHT

BOLTZMANN = 1.380649e-23
ANGLE_EPS = 1e-3


@dataclass(frozen=True)
class LinkBudget:
    tx_power_w: float = 1000.0     # 30 dBW
    tx_gain_dbi: float = 30.0
    rx_gain_dbi: float = 30.0
    noise_temp_k: float = 290.0
    rb_bandwidth_hz: float = 180e3
    carrier_hz: float = 4e9
    boltzmann: float = BOLTZMANN

    def __post_init__(self) -> None:
        for name in ("tx_power_w", "noise_temp_k", "rb_bandwidth_hz", "carrier_hz", "boltzmann"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def effective_power(self) -> float:
        """Transmit power with both antenna gains folded in, watts."""
        return self.tx_power_w * 10.0 ** ((self.tx_gain_dbi + self.rx_gain_dbi) / 10.0)


def noise_power(lb: LinkBudget) -> float:
    """AWGN variance per RB: k_B * T_N * B."""
    return lb.boltzmann * lb.noise_temp_k * lb.rb_bandwidth_hz


@dataclass(frozen=True)
class BeamConfig:
    """Transmit and receive pointing angles, each in the open interval (0, pi)."""

    tx: tuple[float, float]
    rx: tuple[float, float]

    def __post_init__(self) -> None:
        for ang in (*self.tx, *self.rx):
            if not 0.0 < ang < math.pi:
                raise ValueError("beam angles must lie in (0, pi)")


@dataclass(frozen=True)
class OffsetGrid:
    """Discrete angle offsets added to a base beam direction, radians."""

    values: tuple[float, ...] = tuple(
        math.radians(d) for d in (-10.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0)
    )

    def __post_init__(self) -> None:
        if 0.0 not in self.values:
            raise ValueError("offset grid must contain the zero offset")

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def zero_index(self) -> int:
        return self.values.index(0.0)


def clamp_angle(a: float) -> float:
    return min(max(a, ANGLE_EPS), math.pi - ANGLE_EPS)


def apply_offsets(base: tuple[float, float], offsets: tuple[int, int], grid: OffsetGrid) -> tuple[float, float]:
    """Angles = clamp(base + grid[offset]) per-axis, staying inside (0, pi)."""
    for idx in offsets:
        if not 0 <= idx < grid.size:
            raise ValueError(f"offset index {idx} outside grid of size {grid.size}")
    return (
        clamp_angle(base[0] + grid.values[offsets[0]]),
        clamp_angle(base[1] + grid.values[offsets[1]]),
    )


def snr(h: np.ndarray, beams: BeamConfig, g: ArrayGeometry, lb: LinkBudget, path_gain: float) -> float:
    """Per-RB SNR for one channel matrix under the given beam pair."""
    h = np.asarray(h, dtype=complex)
    if h.shape != (g.n_r, g.n_t):
        raise ValueError(f"channel has shape {h.shape}, expected ({g.n_r}, {g.n_t})")
    w_t = steering_tx(g, *beams.tx)
    w_r = steering_rx(g, *beams.rx)
    beam_gain = abs(np.vdot(w_r, h @ w_t)) ** 2
    return lb.effective_power * path_gain * beam_gain / (g.n_r * noise_power(lb))


def snr_per_rb(h_all: np.ndarray, w_t: np.ndarray, w_r: np.ndarray, lb: LinkBudget,
               path_gain: float) -> np.ndarray:
    """Vectorized SNR over the RB axis of h_all (M, N_r, N_t)."""
    y = np.einsum("r,mrt,t->m", w_r.conj(), h_all, w_t, optimize=True)
    n_r = h_all.shape[1]
    return lb.effective_power * path_gain * np.abs(y) ** 2 / (n_r * noise_power(lb))


def rate(snr_value: float, bandwidth: float) -> float:
    """Shannon rate B * log2(1 + snr), bit/s."""
    if snr_value < 0:
        raise ValueError("snr must be non-negative")
    return bandwidth * math.log2(1.0 + snr_value)


def rates_from_snr(snrs: np.ndarray, bandwidth: float) -> np.ndarray:
    return bandwidth * np.log2(1.0 + np.asarray(snrs, dtype=float))


@dataclass(frozen=True)
class RbPool:
    """Fixed partition of RBs {0..M-1} into allocation groups."""

    num_rbs: int
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        seen = sorted(m for grp in self.groups for m in grp)
        if seen != list(range(self.num_rbs)):
            raise ValueError("groups must partition the RB pool")

    @classmethod
    def contiguous(cls, num_rbs: int, num_groups: int) -> "RbPool":
        if num_rbs % num_groups != 0:
            raise ValueError("num_rbs must divide evenly into groups")
        size = num_rbs // num_groups
        groups = tuple(tuple(range(g * size, (g + 1) * size)) for g in range(num_groups))
        return cls(num_rbs, groups)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_of(self) -> np.ndarray:
        """RB index -> group index lookup."""
        out = np.empty(self.num_rbs, dtype=int)
        for gi, grp in enumerate(self.groups):
            out[list(grp)] = gi
        return out

    def expand_bits(self, group_bits: np.ndarray, candidate_groups: tuple[int, ...] | None = None) -> np.ndarray:
        """Per-RB allocation bits from per-group bits, masked to the candidate set."""
        bits = np.zeros(self.num_rbs, dtype=int)
        allowed = set(range(self.num_groups)) if candidate_groups is None else set(candidate_groups)
        for gi, grp in enumerate(self.groups):
            if gi in allowed and group_bits[gi]:
                bits[list(grp)] = 1
        return bits


@dataclass
class RbAllocation:
    """Per-RB allocation bits plus the candidate set they were drawn from."""

    bits: np.ndarray
    candidate_groups: tuple[int, ...]

    def groups_used(self, pool: RbPool) -> int:
        gof = pool.group_of()
        return len({int(gof[m]) for m in np.flatnonzero(self.bits)})


def group_rates(
    h_all: np.ndarray,
    beams: BeamConfig,
    g: ArrayGeometry,
    pool: RbPool,
    lb: LinkBudget,
    path_gain: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(per-RB SNR, per-RB rate, per-group summed rate) for one slot."""
    if h_all.shape[0] != pool.num_rbs:
        raise ValueError("need one channel matrix per RB")
    w_t = steering_tx(g, *beams.tx)
    w_r = steering_rx(g, *beams.rx)
    snrs = snr_per_rb(h_all, w_t, w_r, lb, path_gain)
    rbs = rates_from_snr(snrs, lb.rb_bandwidth_hz)
    grp = np.array([rbs[list(grp)].sum() for grp in pool.groups])
    return snrs, rbs, grp
