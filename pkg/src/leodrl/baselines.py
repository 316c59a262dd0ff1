"""Comparison schemes: beam sweeping / periodic pointing crossed with
greedy / bandit RB-group allocation, plus the learned-scheme runner.

Beam strategies decide once per control cycle; allocation strategies decide
every slot. The decision-complexity proxy counts elementary evaluations
(beam-gain/SNR computations and network forward passes) per decision, since
wall-clock time is hardware-dependent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ArrayGeometry, steering_rx, steering_tx
from .collab import HighAgent, LowAgent, run_episode
from .env import CycleInfo, DownlinkEnv, HighAction, LowAction, SlotInfo
from .link import OffsetGrid, apply_offsets, clamp_angle, rates_from_snr, snr_per_rb


# ---------------------------------------------------------------------------
# scheme identifiers
# ---------------------------------------------------------------------------

CLASSICAL_SCHEMES = ("bfs-greedy", "pbu-greedy", "bfs-mab", "pbu-mab")
LEARNED_SCHEMES = ("proposed", "single-estimation", "independent")


@dataclass(frozen=True)
class SchemeId:
    beam: str        # bfs | pbu | learned
    alloc: str       # greedy | mab | learned
    ablation: str = "none"

    def __post_init__(self) -> None:
        if self.beam not in ("bfs", "pbu", "learned"):
            raise ValueError(f"unknown beam strategy {self.beam!r}")
        if self.alloc not in ("greedy", "mab", "learned"):
            raise ValueError(f"unknown allocation strategy {self.alloc!r}")
        if (self.beam == "learned") != (self.alloc == "learned"):
            raise ValueError("learned beam and allocation come together")
        if self.ablation not in ("none", "independent", "single-estimation"):
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.ablation != "none" and self.beam != "learned":
            raise ValueError("ablations apply to the learned scheme only")

    @classmethod
    def parse(cls, name: str) -> "SchemeId":
        name = name.lower()
        if name in CLASSICAL_SCHEMES:
            beam, alloc = name.split("-")
            return cls(beam, alloc)
        if name == "proposed":
            return cls("learned", "learned", "none")
        if name in ("single-estimation", "independent"):
            return cls("learned", "learned", name)
        raise ValueError(f"unknown scheme {name!r}")

    @property
    def name(self) -> str:
        if self.beam == "learned":
            return "proposed" if self.ablation == "none" else self.ablation
        return f"{self.beam}-{self.alloc}"

    @property
    def train_mode(self) -> str:
        return {"none": "proposed", "independent": "independent",
                "single-estimation": "single_estimation"}[self.ablation]


# ---------------------------------------------------------------------------
# beam management
# ---------------------------------------------------------------------------

def sweep_grid(step: float) -> np.ndarray:
    """Angle grid k*step for k >= 1 strictly inside (0, pi)."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    n = int(math.ceil(math.pi / step)) - 1
    return step * np.arange(1, n + 1)


def bfs_beams(
    h: np.ndarray,
    arrays: ArrayGeometry,
    step: float = math.radians(10.0),
) -> tuple[tuple[float, float], tuple[float, float], int]:
    """Joint exhaustive sweep of (tx, rx) angle pairs over the grid.

    ``h`` is one channel matrix or a stack over RBs; the sweep maximizes the
    beam gain summed across the stack. Returns the transmit angles, receive
    angles and the number of beam-gain evaluations. Ties break to the
    lexicographically first grid entry.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim == 2:
        h = h[None]
    angles = sweep_grid(step)
    pairs = [(t, p) for t in angles for p in angles]
    w_t = np.stack([steering_tx(arrays, t, p) for t, p in pairs], axis=1)  # (N_t, P)
    w_r = np.stack([steering_rx(arrays, t, p) for t, p in pairs], axis=1)  # (N_r, P)
    gain = (np.abs(np.einsum("rq,mrt,tp->mqp", w_r.conj(), h, w_t, optimize=True)) ** 2).sum(axis=0)
    rx_idx, tx_idx = np.unravel_index(int(np.argmax(gain)), gain.shape)
    return pairs[tx_idx], pairs[rx_idx], len(pairs) ** 2


def snap_to_grid(base: tuple[float, float], target: tuple[float, float],
                 grid: OffsetGrid) -> tuple[tuple[float, float], tuple[int, int]]:
    """Closest achievable beam (base + offsets) to the target direction."""
    offs = []
    for axis in range(2):
        best = min(range(grid.size),
                   key=lambda i: (abs(clamp_angle(base[axis] + grid.values[i]) - target[axis]), i))
        offs.append(best)
    return apply_offsets(base, (offs[0], offs[1]), grid), (offs[0], offs[1])


def pbu_beams(info: CycleInfo, grid: OffsetGrid) -> tuple[tuple[float, float], tuple[float, float]]:
    """Ephemeris pointing: snap the cycle-start line-of-sight boresight onto
    the offset grid and hold it for the whole cycle."""
    tx, _ = snap_to_grid(info.base_tx, info.base_tx, grid)
    rx, _ = snap_to_grid(info.base_rx, info.base_rx, grid)
    return tx, rx


# ---------------------------------------------------------------------------
# RB-group allocation
# ---------------------------------------------------------------------------

def greedy_alloc(group_rates: np.ndarray, demand: float) -> tuple[int, ...]:
    """Shortest descending-rate prefix whose sum covers the demand.

    Returns all groups when even the full pool falls short; empty for zero
    demand.
    """
    rates = np.asarray(group_rates, float)
    if np.any(rates < 0):
        raise ValueError("group rates must be non-negative")
    if demand <= 0:
        return ()
    order = np.argsort(-rates, kind="stable")
    total = 0.0
    chosen: list[int] = []
    for g in order:
        chosen.append(int(g))
        total += rates[g]
        if total >= demand:
            return tuple(sorted(chosen))
    return tuple(range(len(rates)))


@dataclass
class MabState:
    """UCB1 statistics over RB groups."""

    counts: np.ndarray
    means: np.ndarray
    c: float = math.sqrt(2.0)

    @classmethod
    def fresh(cls, num_groups: int, c: float = math.sqrt(2.0)) -> "MabState":
        return cls(np.zeros(num_groups, dtype=int), np.zeros(num_groups), c)

    def copy(self) -> "MabState":
        return MabState(self.counts.copy(), self.means.copy(), self.c)


def mab_alloc(
    state: MabState,
    demand: float,
    feedback: list[tuple[int, float]] | None = None,
) -> tuple[tuple[int, ...], MabState]:
    """UCB1 group selection: absorb last round's realized rates, then add
    groups in upper-confidence order until the estimated sum covers demand.

    Never-pulled groups rank first (and contribute a zero rate estimate, so
    selection keeps extending past them until known groups cover demand).
    """
    state = state.copy()
    if feedback:
        for g, realized in feedback:
            state.counts[g] += 1
            state.means[g] += (realized - state.means[g]) / state.counts[g]
    n_groups = len(state.counts)
    total_pulls = int(state.counts.sum())
    scores = np.empty(n_groups)
    for g in range(n_groups):
        if state.counts[g] == 0:
            scores[g] = np.inf
        else:
            bonus = state.c * math.sqrt(math.log(max(total_pulls, 1)) / state.counts[g])
            scores[g] = state.means[g] + bonus
    if demand <= 0:
        return (), state
    order = sorted(range(n_groups), key=lambda g: (-scores[g], g))
    chosen: list[int] = []
    estimate = 0.0
    for g in order:
        chosen.append(g)
        estimate += state.means[g] if state.counts[g] > 0 else 0.0
        if estimate >= demand:
            break
    return tuple(sorted(chosen)), state


# ---------------------------------------------------------------------------
# scheme runner
# ---------------------------------------------------------------------------

@dataclass
class SchemeMetrics:
    scheme: str
    satisfactory_error: float     # mean |Omega| per slot, bits
    groups_used: float            # mean allocated groups per slot
    throughput: float             # mean demand-capped served rate, bit/s
    decision_evals: float         # complexity proxy, evaluations per decision
    episodes: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "satisfactory_error": self.satisfactory_error,
            "groups_used": self.groups_used,
            "throughput": self.throughput,
            "decision_evals": self.decision_evals,
        }


def _classical_episode(env: DownlinkEnv, scheme: SchemeId, mab_state: MabState | None,
                       sweep_step: float) -> tuple[dict, MabState | None, int]:
    t_cycle = env.times.slots_per_cycle
    evals = 0
    state_box = {"mab": mab_state, "feedback": None, "rx": None, "w_t": None}

    def high_decider(info: CycleInfo) -> HighAction:
        nonlocal evals
        if scheme.beam == "bfs":
            tx, rx, n = bfs_beams(info.h_first, env.arrays, sweep_step)
            evals += n
        else:
            tx, rx = pbu_beams(info, env.grid)
            evals += 1
        state_box["rx"] = rx
        return HighAction(groups=tuple(range(env.pool.num_groups)), tx_angles=tx)

    def low_decider(info: SlotInfo) -> LowAction:
        nonlocal evals
        w_r = steering_rx(env.arrays, *state_box["rx"])
        snrs = snr_per_rb(info.h_all, info.w_t, w_r, env.lb, info.path_gain)
        rates = rates_from_snr(snrs, env.lb.rb_bandwidth_hz)
        group_rates = np.array([rates[list(grp)].sum() for grp in env.pool.groups])
        evals += env.pool.num_rbs + env.pool.num_groups
        if scheme.alloc == "greedy":
            chosen = greedy_alloc(group_rates, info.demand)
        else:
            chosen, state_box["mab"] = mab_alloc(state_box["mab"], info.demand,
                                                 state_box["feedback"])
            state_box["feedback"] = [(g, float(group_rates[g])) for g in chosen]
        bits = tuple(1 if g in chosen else 0 for g in range(env.pool.num_groups))
        return LowAction(group_bits=bits, rx_angles=state_box["rx"])

    while True:
        _, _ = env.step_high(high_decider)
        if env.done:
            break
        for _ in range(t_cycle):
            env.step_low(low_decider)

    trace = env.trace
    summary = {
        "return_low": float(np.mean([r.smoothed_reward for r in trace])),
        "throughput": float(np.mean([min(r.served, r.demand) for r in trace])),
        "satisfactory_error": float(np.mean([abs(r.omega) for r in trace])),
        "groups_used": float(np.mean([r.groups_used for r in trace])),
    }
    return summary, state_box["mab"], evals


def _learned_eval_evals(env: DownlinkEnv, low_agent: LowAgent, high_agent: HighAgent) -> float:
    """Logical evaluation count per decision for the learned scheme."""
    t_cycle = env.times.slots_per_cycle
    m = env.pool.num_rbs
    depth = high_agent.cfg.rollout_depth
    per_cycle = len(high_agent.candidates) * depth * t_cycle * m \
        + len(high_agent.candidates) + 1
    per_slot = m + 1
    return per_cycle, per_slot


def run_scheme(
    env: DownlinkEnv,
    scheme: SchemeId | str,
    episodes: int,
    seed: int,
    low_agent: LowAgent | None = None,
    high_agent: HighAgent | None = None,
    sweep_step: float = math.radians(10.0),
) -> SchemeMetrics:
    """Run one scheme for several frozen episodes and aggregate its metrics.

    Learned schemes evaluate the supplied (already trained) agents greedily;
    classical schemes carry their bandit state across episodes of the run.
    The episode seed sequence is derived from ``seed``, so identical calls
    produce identical metrics.
    """
    if isinstance(scheme, str):
        scheme = SchemeId.parse(scheme)
    per_episode: list[dict] = []
    total_evals = 0.0
    total_decisions = 0
    mab_state = MabState.fresh(env.pool.num_groups) if scheme.alloc == "mab" else None

    for ep in range(episodes):
        episode_seed = int(np.random.SeedSequence((seed, ep)).generate_state(1)[0])
        if scheme.beam == "learned":
            if low_agent is None or high_agent is None:
                raise ValueError("learned schemes need trained agents")
            rng = np.random.default_rng(episode_seed)
            summary = run_episode(env, low_agent, high_agent, rng,
                                  mode=scheme.train_mode, learn=False,
                                  episode_seed=episode_seed)
            cycles = len(summary["cycles"])
            slots = cycles * env.times.slots_per_cycle
            per_cycle, per_slot = _learned_eval_evals(env, low_agent, high_agent)
            total_evals += cycles * per_cycle + slots * per_slot
            total_decisions += cycles + slots
            per_episode.append({k: summary[k] for k in
                                ("return_low", "throughput", "satisfactory_error", "groups_used")})
        else:
            env.reset(episode_seed)
            summary, mab_state, evals = _classical_episode(env, scheme, mab_state, sweep_step)
            cycles = len({r.cycle for r in env.trace})
            total_evals += evals
            total_decisions += cycles + len(env.trace)
            per_episode.append(summary)

    agg = {k: float(np.mean([row[k] for row in per_episode]))
           for k in ("throughput", "satisfactory_error", "groups_used")}
    return SchemeMetrics(
        scheme=scheme.name,
        satisfactory_error=agg["satisfactory_error"],
        groups_used=agg["groups_used"],
        throughput=agg["throughput"],
        decision_evals=total_evals / max(total_decisions, 1),
        episodes=per_episode,
    )
