"""Two-time-scale downlink environment.

The satellite (higher tier) acts once per control cycle of T slots: it picks
its transmit beam offsets and the candidate RB-group set. The UE (lower
tier) acts every slot: receive-beam offsets plus per-group allocation bits,
which are expanded to per-RB bits and masked to the satellite's candidate
set. Rewards follow the system's utility structure:

* per-slot UE reward: mean rate of the selected RBs plus eta times the
  satisfaction shortfall min(sum b*c - D, 0), smoothed through a FIFO
  buffer;
* per-cycle satellite reward: mean over slots of (selected-RB mean rate)
  restricted to slots whose demand constraint held.

A fresh multipath realization is drawn at every cycle start; within a cycle
only the deterministic Doppler/delay phase evolution moves the channel.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .channel import (
    ArrayGeometry,
    ChannelConfig,
    MultipathProfile,
    channel_matrices,
    sample_paths,
    steering_rx,
    steering_tx,
)
from .link import (
    BeamConfig,
    LinkBudget,
    OffsetGrid,
    RbPool,
    apply_offsets,
    rates_from_snr,
    snr_per_rb,
)
from .orbit import GeometrySample, OrbitConfig, geometry, in_service, pathloss, propagate


# ---------------------------------------------------------------------------
# time scales and demand
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeScales:
    slots_per_cycle: int
    episode_slots: int
    slot_len: float = 1e-3

    def __post_init__(self) -> None:
        if self.slots_per_cycle < 1 or self.episode_slots < 1 or self.slot_len <= 0:
            raise ValueError("invalid time scales")

    @property
    def n_high(self) -> int:
        return (self.episode_slots - 1) // self.slots_per_cycle


@dataclass(frozen=True)
class DemandProcess:
    lam: float = 2.0
    unit_bits: float = 1e7

    def __post_init__(self) -> None:
        if self.lam <= 0 or self.unit_bits <= 0:
            raise ValueError("lam and unit_bits must be positive")

    def quantile(self, q: float) -> float:
        """unit_bits times the smallest k with Poisson CDF(k) >= q."""
        if not 0.0 <= q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        k, cdf, term = 0, math.exp(-self.lam), math.exp(-self.lam)
        while cdf < q:
            k += 1
            term *= self.lam / k
            cdf += term
        return k * self.unit_bits


def demand(rng: np.random.Generator, dp: DemandProcess) -> float:
    """One slot's receiving-rate demand in bits: unit * Poisson(lam)."""
    return float(rng.poisson(dp.lam)) * dp.unit_bits


# ---------------------------------------------------------------------------
# states, actions, rewards
# ---------------------------------------------------------------------------

@dataclass
class HighState:
    """Satellite position plus the previous cycle's per-slot mean-SNR trace."""

    position: np.ndarray
    mean_snr: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.position, float), np.asarray(self.mean_snr, float)])


@dataclass(frozen=True)
class HighAction:
    """Transmit-beam offsets (or explicit angles) and the candidate RB groups."""

    groups: tuple[int, ...]
    tx_offsets: tuple[int, int] | None = None
    tx_angles: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not self.groups:
            raise ValueError("candidate group set must be non-empty")
        if (self.tx_offsets is None) == (self.tx_angles is None):
            raise ValueError("exactly one of tx_offsets / tx_angles must be given")


@dataclass
class LowState:
    """Previous slot's per-RB SNRs and mean per-antenna received magnitudes."""

    rb_snr: np.ndarray
    rx_power: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.rb_snr, float), np.asarray(self.rx_power, float)])


@dataclass(frozen=True)
class LowAction:
    """Receive-beam offsets (or explicit angles) and per-group selection bits."""

    group_bits: tuple[int, ...]
    rx_offsets: tuple[int, int] | None = None
    rx_angles: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if (self.rx_offsets is None) == (self.rx_angles is None):
            raise ValueError("exactly one of rx_offsets / rx_angles must be given")
        if any(b not in (0, 1) for b in self.group_bits):
            raise ValueError("group bits must be 0/1")


class RewardBuffer:
    """FIFO of recent instantaneous rewards; the emitted reward is the mean."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._buf: deque[float] = deque(maxlen=capacity)

    def push(self, value: float) -> float:
        self._buf.append(float(value))
        return self.mean()

    def mean(self) -> float:
        return float(np.mean(self._buf)) if self._buf else 0.0

    def __len__(self) -> int:
        return len(self._buf)


def satisfaction(bits: np.ndarray, rates: np.ndarray, demand_bits: float) -> tuple[float, bool]:
    """Shortfall Omega = min(sum b*c - D, 0) and the satisfied flag."""
    served = float(np.dot(bits, rates))
    omega = min(served - demand_bits, 0.0)
    return omega, served >= demand_bits


def low_reward(
    bits: np.ndarray,
    rates: np.ndarray,
    demand_bits: float,
    eta: float,
    buf: RewardBuffer,
) -> tuple[float, float]:
    """(smoothed reward, raw reward) for one UE slot.

    Raw reward is selected-RB mean rate plus eta * Omega; an empty selection
    contributes zero mean rate and Omega = -D. The smoothed value is the
    FIFO-buffer mean after pushing the raw reward.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    total = float(bits.sum())
    mean_rate = float(np.dot(bits, rates)) / total if total > 0 else 0.0
    omega, _ = satisfaction(bits, rates, demand_bits)
    raw = mean_rate + eta * omega
    return buf.push(raw), raw


@dataclass
class SlotRecord:
    """Everything the metrics and bookkeeping identities need from one slot."""

    slot: int
    cycle: int
    demand: float
    bits: np.ndarray
    snr: np.ndarray
    rates: np.ndarray
    served: float
    mean_rate: float          # selected-RB mean rate (0 if nothing selected)
    omega: float
    satisfied: bool
    raw_reward: float
    smoothed_reward: float
    mean_snr: float           # mean SNR over the whole RB pool
    groups_used: int


def high_reward(records: Sequence[SlotRecord]) -> float:
    """Cycle reward: mean over slots of satisfied-slot selected-RB mean rate."""
    if not records:
        raise ValueError("empty cycle log")
    return float(np.mean([r.mean_rate if r.satisfied else 0.0 for r in records]))


# ---------------------------------------------------------------------------
# decision-time context passed to baseline decision callables
# ---------------------------------------------------------------------------

@dataclass
class CycleInfo:
    geo: GeometrySample
    profile: MultipathProfile
    h_first: np.ndarray            # channel matrices of the first slot, (M, N_r, N_t)
    base_tx: tuple[float, float]
    base_rx: tuple[float, float]
    path_gain: float


@dataclass
class SlotInfo:
    h_all: np.ndarray
    base_rx: tuple[float, float]
    w_t: np.ndarray
    path_gain: float
    candidate_groups: tuple[int, ...]
    demand: float
    slot_in_cycle: int


HighDecision = HighAction | Callable[[CycleInfo], HighAction]
LowDecision = LowAction | Callable[[SlotInfo], LowAction]


@dataclass
class LowStepResult:
    state: LowState
    reward: float
    raw_reward: float
    rates: np.ndarray
    omega: float
    satisfied: bool
    bits: np.ndarray


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

class DownlinkEnv:
    """Single-satellite, single-UE downlink with aligned two-tier control cycles."""

    def __init__(
        self,
        orbit_cfg: OrbitConfig,
        ue_ecef: np.ndarray,
        arrays: ArrayGeometry,
        channel_cfg: ChannelConfig,
        link_budget: LinkBudget,
        pool: RbPool,
        times: TimeScales,
        demand_process: DemandProcess,
        offset_grid: OffsetGrid,
        eta: float = 1.0,
        reward_window: int = 20,
        min_elevation: float = math.pi / 6,
        episode_start: float = 0.0,
        seed: int = 0,
    ):
        self.orbit_cfg = orbit_cfg
        self.ue = np.asarray(ue_ecef, dtype=float)
        self.arrays = arrays
        self.channel_cfg = channel_cfg
        self.lb = link_budget
        self.pool = pool
        self.times = times
        self.demand_process = demand_process
        self.grid = offset_grid
        self.eta = eta
        self.reward_window = reward_window
        self.min_elevation = min_elevation
        self.episode_start = episode_start
        self._seed = seed
        self.reset(seed)

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int | None = None) -> HighState:
        if seed is not None:
            self._seed = seed
        ss = np.random.SeedSequence(self._seed)
        demand_ss, channel_ss = ss.spawn(2)
        self._rng_demand = np.random.default_rng(demand_ss)
        self._rng_channel = np.random.default_rng(channel_ss)
        bias = self.channel_cfg.pointing_bias
        if bias > 0.0:
            # quasi-static propagation-cluster displacement, fixed for the pass
            self._cluster_offset = (
                self._rng_channel.uniform(-bias, bias, size=2),
                self._rng_channel.uniform(-bias, bias, size=2),
            )
        else:
            self._cluster_offset = None
        self.slot = 0
        self.cycle = -1
        self.done = False
        self.trace: list[SlotRecord] = []
        self._buffer = RewardBuffer(self.reward_window)
        self._in_cycle = False
        self._low_state = LowState(np.zeros(self.pool.num_rbs), np.zeros(self.arrays.n_r))
        self._cycle_ctx = None
        state = self._high_state()
        if not in_service(self._geometry_at(0.0).elevation, self.min_elevation):
            raise ValueError("episode_start is outside the service window")
        return state

    def _time_at(self, slot: int) -> float:
        return self.episode_start + slot * self.times.slot_len

    def _geometry_at(self, t_rel_slot: float) -> GeometrySample:
        pos, vel = propagate(self.orbit_cfg, self.episode_start + t_rel_slot * self.times.slot_len)
        return geometry(pos, vel, self.ue)

    def _high_state(self) -> HighState:
        pos, _ = propagate(self.orbit_cfg, self._time_at(self.slot))
        t_cycle = self.times.slots_per_cycle
        trace = np.zeros(t_cycle)
        recent = [r.mean_snr for r in self.trace[-t_cycle:]]
        if recent:
            trace[-len(recent):] = recent
        return HighState(pos, trace)

    def peek_high_state(self) -> HighState:
        """High state at the current (boundary) slot without advancing anything."""
        return self._high_state()

    @property
    def low_state(self) -> LowState:
        return self._low_state

    @property
    def candidate_groups(self) -> tuple[int, ...]:
        if self._cycle_ctx is None:
            raise RuntimeError("no active cycle")
        return self._cycle_ctx["candidates"]

    @property
    def base_beams(self) -> BeamConfig:
        if self._cycle_ctx is None:
            raise RuntimeError("no active cycle")
        return BeamConfig(tx=self._cycle_ctx["base_tx"], rx=self._cycle_ctx["base_rx"])

    # -- higher tier --------------------------------------------------------

    def step_high(self, action: HighDecision) -> tuple[HighState, float | None]:
        """Harvest the finished cycle's reward and start the next cycle.

        Must be called exactly at a cycle boundary. Returns the high state at
        this boundary and the previous cycle's reward (None before the first
        cycle). Sets ``done`` instead of starting a cycle when the episode
        budget is exhausted or the satellite left the service window.
        """
        if self.done:
            raise RuntimeError("episode is over")
        t_cycle = self.times.slots_per_cycle
        if self.slot % t_cycle != 0 or self._in_cycle:
            raise RuntimeError("step_high must be called at a cycle boundary")
        reward_prev = high_reward(self.trace[-t_cycle:]) if self.slot > 0 else None
        state = self._high_state()

        if self.slot + t_cycle > self.times.episode_slots:
            self.done = True
            return state, reward_prev
        geo = self._geometry_at(self.slot)
        if not in_service(geo.elevation, self.min_elevation):
            self.done = True
            return state, reward_prev

        profile = sample_paths(self._rng_channel, geo, self.channel_cfg, self.arrays,
                               cluster_offset=self._cluster_offset)
        path_gain = pathloss(geo.slant_distance, self.lb.carrier_hz)
        base_tx, base_rx = geo.boresight_aod, geo.boresight_aoa
        if callable(action):
            h_first = channel_matrices(profile, self.arrays, self.slot, self.pool.num_rbs)
            action = action(CycleInfo(geo, profile, h_first, base_tx, base_rx, path_gain))
        candidates = tuple(sorted(set(action.groups)))
        if any(g < 0 or g >= self.pool.num_groups for g in candidates):
            raise ValueError("candidate group index out of range")
        tx = action.tx_angles if action.tx_angles is not None else apply_offsets(
            base_tx, action.tx_offsets, self.grid
        )
        self._cycle_ctx = {
            "geo": geo,
            "profile": profile,
            "path_gain": path_gain,
            "base_tx": base_tx,
            "base_rx": base_rx,
            "tx": tx,
            "w_t": steering_tx(self.arrays, *tx),
            "candidates": candidates,
        }
        self.cycle += 1
        self._in_cycle = True
        return state, reward_prev

    # -- lower tier ---------------------------------------------------------

    def step_low(self, action: LowDecision) -> LowStepResult:
        """Run one UE slot inside the active cycle."""
        if self.done:
            raise RuntimeError("episode is over")
        if not self._in_cycle:
            raise RuntimeError("no active cycle; call step_high first")
        ctx = self._cycle_ctx
        n = self.slot
        demand_bits = demand(self._rng_demand, self.demand_process)
        h_all = channel_matrices(ctx["profile"], self.arrays, n, self.pool.num_rbs)
        if callable(action):
            action = action(SlotInfo(
                h_all=h_all,
                base_rx=ctx["base_rx"],
                w_t=ctx["w_t"],
                path_gain=ctx["path_gain"],
                candidate_groups=ctx["candidates"],
                demand=demand_bits,
                slot_in_cycle=n % self.times.slots_per_cycle,
            ))
        if len(action.group_bits) != self.pool.num_groups:
            raise ValueError("group bit count must match the pool")
        rx = action.rx_angles if action.rx_angles is not None else apply_offsets(
            ctx["base_rx"], action.rx_offsets, self.grid
        )
        w_r = steering_rx(self.arrays, *rx)
        snrs = snr_per_rb(h_all, ctx["w_t"], w_r, self.lb, ctx["path_gain"])
        rates = rates_from_snr(snrs, self.lb.rb_bandwidth_hz)
        bits = self.pool.expand_bits(np.asarray(action.group_bits), ctx["candidates"])
        smoothed, raw = low_reward(bits, rates, demand_bits, self.eta, self._buffer)
        omega, satisfied = satisfaction(bits, rates, demand_bits)
        served = float(np.dot(bits, rates))
        total_bits = float(bits.sum())
        mean_rate = served / total_bits if total_bits > 0 else 0.0
        y_r = np.abs(h_all @ ctx["w_t"]).mean(axis=0)
        record = SlotRecord(
            slot=n,
            cycle=self.cycle,
            demand=demand_bits,
            bits=bits,
            snr=snrs,
            rates=rates,
            served=served,
            mean_rate=mean_rate,
            omega=omega,
            satisfied=satisfied,
            raw_reward=raw,
            smoothed_reward=smoothed,
            mean_snr=float(snrs.mean()),
            groups_used=int(sum(1 for grp_bits in
                                (bits[list(grp)] for grp in self.pool.groups) if grp_bits.any())),
        )
        self.trace.append(record)
        self.slot += 1
        self._low_state = LowState(snrs.copy(), y_r)
        if self.slot % self.times.slots_per_cycle == 0:
            self._in_cycle = False
        return LowStepResult(self._low_state, smoothed, raw, rates, omega, satisfied, bits)

    # -- rollout support ----------------------------------------------------

    def rollout_model(self, demand_quantile: float = 0.9) -> "EnvCycleModel":
        """Persistence model of upcoming cycles for the satellite's rollout.

        Freezes the current multipath realization and link geometry; future
        positions follow the known ephemeris and the per-slot demand is fixed
        at the given quantile of the demand process.
        """
        if self._cycle_ctx is None:
            raise RuntimeError("no cycle context to freeze")
        return EnvCycleModel(
            orbit_cfg=self.orbit_cfg,
            arrays=self.arrays,
            lb=self.lb,
            pool=self.pool,
            times=self.times,
            grid=self.grid,
            profile=self._cycle_ctx["profile"],
            path_gain=self._cycle_ctx["path_gain"],
            base_tx=self._cycle_ctx["base_tx"],
            base_rx=self._cycle_ctx["base_rx"],
            episode_start=self.episode_start,
            start_slot=self.slot,
            demand_bits=self.demand_process.quantile(demand_quantile),
        )


def initial_high_action(pool: RbPool, grid: OffsetGrid) -> HighAction:
    """Neutral first-cycle action: boresight pointing, all groups offered."""
    return HighAction(
        groups=tuple(range(pool.num_groups)),
        tx_offsets=(grid.zero_index, grid.zero_index),
    )


class EnvCycleModel:
    """Hypothetical-cycle evaluator used by the satellite's rollout.

    Future cycles reuse the frozen multipath profile (only the deterministic
    slot-index phase evolution advances) and a fixed demand level, so cycle
    scores are a pure function of the candidate action and the reference
    low-tier action trajectory. Per-slot rates are cached keyed on
    (start slot, tx pointing, rx sequence): candidates that differ only in
    their group subset reuse the same rate stack.
    """

    def __init__(self, orbit_cfg, arrays, lb, pool, times, grid, profile, path_gain,
                 base_tx, base_rx, episode_start, start_slot, demand_bits):
        self.orbit_cfg = orbit_cfg
        self.arrays = arrays
        self.lb = lb
        self.pool = pool
        self.times = times
        self.grid = grid
        self.profile = profile
        self.path_gain = path_gain
        self.base_tx = base_tx
        self.base_rx = base_rx
        self.episode_start = episode_start
        self.start_slot = start_slot
        self.demand_bits = demand_bits
        self._h_cache: dict[int, np.ndarray] = {}
        self._rates_cache: dict = {}
        self._bits_cache: dict = {}
        self.slot_evals = 0

    def initial(self, state: HighState) -> tuple[HighState, int]:
        return state, self.start_slot

    def high_state(self, model_state: tuple[HighState, int]) -> HighState:
        return model_state[0]

    def _channels(self, n0: int, t_cycle: int) -> np.ndarray:
        h = self._h_cache.get(n0)
        if h is None:
            h = np.stack([
                channel_matrices(self.profile, self.arrays, n0 + p, self.pool.num_rbs)
                for p in range(t_cycle)
            ])  # (T, M, N_r, N_t)
            self._h_cache[n0] = h
        return h

    def _resolve_rx(self, act: LowAction) -> tuple[float, float]:
        if act.rx_angles is not None:
            return act.rx_angles
        return apply_offsets(self.base_rx, act.rx_offsets, self.grid)

    def _rate_stack(self, n0: int, tx: tuple[float, float],
                    low_actions: Sequence[LowAction]) -> tuple[np.ndarray, np.ndarray]:
        t_cycle = self.times.slots_per_cycle
        rx_seq = tuple(self._resolve_rx(a) for a in low_actions[:t_cycle])
        key = (n0, tx, rx_seq)
        hit = self._rates_cache.get(key)
        if hit is not None:
            return hit
        h_stack = self._channels(n0, t_cycle)
        w_t = steering_tx(self.arrays, *tx)
        if len(set(rx_seq)) == 1:
            w_r = steering_rx(self.arrays, *rx_seq[0])
            y = np.einsum("r,pmrt,t->pm", w_r.conj(), h_stack, w_t, optimize=True)
        else:
            w_r_stack = np.stack([steering_rx(self.arrays, *rx) for rx in rx_seq])
            y = np.einsum("pr,pmrt,t->pm", w_r_stack.conj(), h_stack, w_t, optimize=True)
        noise = self.lb.boltzmann * self.lb.noise_temp_k * self.lb.rb_bandwidth_hz
        snrs = self.lb.effective_power * self.path_gain * np.abs(y) ** 2 / (self.arrays.n_r * noise)
        rates = rates_from_snr(snrs, self.lb.rb_bandwidth_hz)  # (T, M)
        trace = snrs.mean(axis=1)  # (T,)
        self._rates_cache[key] = (rates, trace)
        return rates, trace

    def step(
        self,
        model_state: tuple[HighState, int],
        action: HighAction,
        low_actions: Sequence[LowAction],
    ) -> tuple[float, tuple[HighState, int]]:
        _, n0 = model_state
        t_cycle = self.times.slots_per_cycle
        if len(low_actions) < t_cycle:
            raise ValueError("need one low action per slot of the cycle")
        tx = action.tx_angles if action.tx_angles is not None else apply_offsets(
            self.base_tx, action.tx_offsets, self.grid
        )
        candidates = tuple(sorted(set(action.groups)))
        rates, trace = self._rate_stack(n0, tx, low_actions)

        def bits_for(a: LowAction) -> np.ndarray:
            key = (a.group_bits, candidates)
            hit = self._bits_cache.get(key)
            if hit is None:
                hit = self.pool.expand_bits(np.asarray(a.group_bits), candidates)
                self._bits_cache[key] = hit
            return hit

        bit_stack = np.stack([bits_for(a) for a in low_actions[:t_cycle]])  # (T, M)
        served = (bit_stack * rates).sum(axis=1)
        totals = bit_stack.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_rate = np.where(totals > 0, served / np.maximum(totals, 1), 0.0)
        rewards = np.where((served >= self.demand_bits) & (totals > 0), mean_rate, 0.0)
        self.slot_evals += t_cycle * self.pool.num_rbs
        pos, _ = propagate(self.orbit_cfg, self.episode_start + (n0 + t_cycle) * self.times.slot_len)
        next_state = HighState(pos, trace)
        return float(rewards.mean()), (next_state, n0 + t_cycle)
