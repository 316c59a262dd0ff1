"""Two-tier collaborative learning scheme.

Each policy-updating stage has two phases. First the UE updates its policy
network with a clipped-ratio surrogate whose per-sample weight is the *sum*
of both tiers' one-step advantages, and its value network with MSE against
cycle-truncated discounted returns. Then it generates a greedy decision
trajectory under the updated policy and hands it to the satellite, which
picks its next action by enumerating candidates through a finite-step
rollout: simulated cycle rewards plus a learned tail value at the horizon.

Ablations reuse the same machinery: ``single_estimation`` drops the
high-tier advantage from the surrogate; ``independent`` additionally
replaces the shared trajectory with a neutral one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .env import (
    DownlinkEnv,
    HighAction,
    HighState,
    LowAction,
    initial_high_action,
)
from .link import OffsetGrid, RbPool
from .numkit import (
    AdamState,
    Gradients,
    MlpParams,
    apply_update,
    init_mlp,
    mlp_backward_batch,
    mlp_forward,
    mlp_forward_batch,
    param_change,
)

MODES = ("proposed", "single_estimation", "independent")


# ---------------------------------------------------------------------------
# featurization (agent-side conditioning of raw physical states)
# ---------------------------------------------------------------------------

def featurize_low(vec: np.ndarray) -> np.ndarray:
    """Log-compress non-negative SNR/magnitude features to O(1) scale."""
    return np.log10(1.0 + np.clip(np.asarray(vec, float), 0.0, None)) / 6.0


def featurize_high(vec: np.ndarray) -> np.ndarray:
    """Position in 1e7 m units, SNR trace log-compressed."""
    vec = np.asarray(vec, float)
    pos = vec[:3] / 1e7
    trace = np.log10(1.0 + np.clip(vec[3:], 0.0, None)) / 6.0
    return np.concatenate([pos, trace])


# ---------------------------------------------------------------------------
# configuration and experience containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentsConfig:
    policy_hidden: tuple[int, ...] = (300, 200, 200)
    value_hidden: tuple[int, ...] = (400, 300, 200)
    learning_rate: float = 3e-4
    clip: float = 0.2
    kl_limit: float = 0.015
    gamma_low: float = 0.99
    gamma_high: float = 0.99
    replay_low: int = 9600
    replay_high: int = 1200
    rollout_depth: int = 2
    reward_scale: float = 1e-7
    update_epochs: int = 4
    minibatch: int = 32
    low_update_every: int = 1
    tail_update_steps: int = 4
    rollout_tx_offsets: tuple[int, ...] | None = None
    rollout_demand_quantile: float = 0.9

    def __post_init__(self) -> None:
        if self.rollout_depth < 1:
            raise ValueError("rollout depth must be >= 1")
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")


@dataclass
class LowExperience:
    features: np.ndarray
    action: LowAction
    logp: float
    reward: float                 # smoothed reward, agent-scaled
    next_features: np.ndarray
    cycle: int
    value_target: float = 0.0     # cycle-truncated discounted return, scaled
    adv_high: float = 0.0         # broadcast high-tier advantage, scaled


@dataclass
class HighExperience:
    features: np.ndarray
    action: HighAction
    reward: float                 # cycle reward, agent-scaled
    next_features: np.ndarray
    cycle: int
    value_target: float = 0.0     # episode-truncated discounted cycle return


class Replay:
    """Fixed-capacity FIFO experience memory with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def extend(self, items) -> None:
        for item in items:
            self.push(item)

    def sample(self, rng: np.random.Generator, k: int) -> list:
        if not self._items:
            raise ValueError("replay memory is empty")
        idx = rng.integers(0, len(self._items), size=k)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


# ---------------------------------------------------------------------------
# agents
# ---------------------------------------------------------------------------

def policy_heads(grid: OffsetGrid, pool: RbPool) -> tuple:
    return (("categorical", grid.size), ("categorical", grid.size), ("bernoulli", pool.num_groups))


class LowAgent:
    """UE-side policy + value networks, old-policy snapshot and replay."""

    def __init__(self, rng: np.random.Generator, input_dim: int, grid: OffsetGrid,
                 pool: RbPool, cfg: AgentsConfig):
        self.cfg = cfg
        self.grid = grid
        self.pool = pool
        self.policy = init_mlp(rng, input_dim, cfg.policy_hidden, policy_heads(grid, pool))
        self.policy_old = self.policy.copy()
        self.value = init_mlp(rng, input_dim, cfg.value_hidden, (("scalar", 1),))
        self.policy_adam = AdamState.zeros_like(self.policy)
        self.value_adam = AdamState.zeros_like(self.value)
        self.replay = Replay(cfg.replay_low)

    def params_flat(self) -> np.ndarray:
        return np.concatenate([self.policy.flat(), self.value.flat()])


class HighAgent:
    """Satellite-side tail-value network, candidate table and replay."""

    def __init__(self, rng: np.random.Generator, input_dim: int, grid: OffsetGrid,
                 pool: RbPool, cfg: AgentsConfig):
        self.cfg = cfg
        self.tail_value = init_mlp(rng, input_dim, cfg.value_hidden, (("scalar", 1),))
        self.tail_adam = AdamState.zeros_like(self.tail_value)
        self.replay = Replay(cfg.replay_high)
        self.candidates = build_candidate_table(grid, pool, cfg.rollout_tx_offsets)

    def params_flat(self) -> np.ndarray:
        return self.tail_value.flat()


def build_candidate_table(grid: OffsetGrid, pool: RbPool,
                          tx_offsets: tuple[int, ...] | None = None) -> list[HighAction]:
    """Every (tx offset pair) x (non-empty group subset), in fixed index order."""
    idxs = tuple(range(grid.size)) if tx_offsets is None else tuple(tx_offsets)
    subsets = []
    for mask in range(1, 2 ** pool.num_groups):
        subsets.append(tuple(g for g in range(pool.num_groups) if mask >> g & 1))
    return [
        HighAction(groups=subset, tx_offsets=(i, j))
        for i in idxs for j in idxs for subset in subsets
    ]


# ---------------------------------------------------------------------------
# policy distribution
# ---------------------------------------------------------------------------

def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def act_low(
    params: MlpParams,
    features: np.ndarray,
    rng: np.random.Generator | None,
    mode: str = "sample",
) -> tuple[LowAction, float]:
    """Draw (or greedily pick) a low-tier action; returns it with its log-prob."""
    theta_logits, phi_logits, bern_logits = mlp_forward(params, features)
    if mode == "sample":
        if rng is None:
            raise ValueError("sampling requires an rng")
        theta_idx = int(rng.choice(len(theta_logits), p=np.exp(_log_softmax(theta_logits))))
        phi_idx = int(rng.choice(len(phi_logits), p=np.exp(_log_softmax(phi_logits))))
        bits = tuple(int(rng.random() < p) for p in _sigmoid(bern_logits))
    elif mode == "greedy":
        theta_idx = int(np.argmax(theta_logits))
        phi_idx = int(np.argmax(phi_logits))
        bits = tuple(int(z > 0.0) for z in bern_logits)
    else:
        raise ValueError(f"unknown act mode {mode!r}")
    action = LowAction(group_bits=bits, rx_offsets=(theta_idx, phi_idx))
    return action, action_logp(params, features, action)


def action_logp(params: MlpParams, features: np.ndarray, action: LowAction) -> float:
    theta_logits, phi_logits, bern_logits = mlp_forward(params, features)
    lp = _log_softmax(theta_logits)[action.rx_offsets[0]]
    lp += _log_softmax(phi_logits)[action.rx_offsets[1]]
    p = _sigmoid(bern_logits)
    bits = np.asarray(action.group_bits, float)
    lp += float(np.sum(bits * np.log(np.clip(p, 1e-12, 1.0))
                       + (1.0 - bits) * np.log(np.clip(1.0 - p, 1e-12, 1.0))))
    return float(lp)


def _logp_batch(params: MlpParams, feats: np.ndarray, actions: Sequence[LowAction]
                ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched log-probs and the per-head d(logp)/d(logits) seeds."""
    theta_logits, phi_logits, bern_logits = mlp_forward_batch(params, feats)
    batch = feats.shape[0]
    theta_idx = np.array([a.rx_offsets[0] for a in actions])
    phi_idx = np.array([a.rx_offsets[1] for a in actions])
    bits = np.array([a.group_bits for a in actions], dtype=float)

    def cat_terms(logits, idx):
        z = logits - logits.max(axis=1, keepdims=True)
        log_z = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        lp = log_z[np.arange(batch), idx]
        softmax = np.exp(log_z)
        seed = -softmax
        seed[np.arange(batch), idx] += 1.0
        return lp, seed

    lp_t, seed_t = cat_terms(theta_logits, theta_idx)
    lp_p, seed_p = cat_terms(phi_logits, phi_idx)
    p = _sigmoid(bern_logits)
    lp_b = (bits * np.log(np.clip(p, 1e-12, 1.0))
            + (1.0 - bits) * np.log(np.clip(1.0 - p, 1e-12, 1.0))).sum(axis=1)
    seed_b = bits - p
    return lp_t + lp_p + lp_b, [seed_t, seed_p, seed_b]


# ---------------------------------------------------------------------------
# advantages and losses
# ---------------------------------------------------------------------------

def value_of(params: MlpParams, features: np.ndarray) -> float:
    (out,) = mlp_forward(params, features)
    return float(out[0])


def advantage_low(exp: LowExperience, value_params: MlpParams, gamma: float) -> float:
    """One-step TD advantage R + gamma V(s') - V(s) under the given critic."""
    return exp.reward + gamma * value_of(value_params, exp.next_features) \
        - value_of(value_params, exp.features)


def advantage_high(reward: float, features: np.ndarray, next_features: np.ndarray,
                   tail_params: MlpParams, gamma: float) -> float:
    """Cycle-level TD advantage, broadcast unchanged to the cycle's slots."""
    return reward + gamma * value_of(tail_params, next_features) \
        - value_of(tail_params, features)


def compute_value_targets(rewards: Sequence[float], gamma: float) -> list[float]:
    """Discounted suffix sums truncated at the end of the sequence (one cycle)."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def policy_loss(
    batch: Sequence[LowExperience],
    advantages: np.ndarray,
    params: MlpParams,
    old_params: MlpParams,
    clip: float,
) -> tuple[float, Gradients, float]:
    """Clipped-ratio surrogate (to maximize), its gradient, and the KL estimate.

    Per-sample contribution is clip(ratio, 1-clip, 1+clip) * A with the
    gradient flowing only through unclipped ratios; advantages are constants.
    """
    if not batch:
        raise ValueError("empty batch")
    feats = np.stack([e.features for e in batch])
    actions = [e.action for e in batch]
    lp_new, seeds = _logp_batch(params, feats, actions)
    lp_old, _ = _logp_batch(old_params, feats, actions)
    ratio = np.exp(lp_new - lp_old)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    loss = float(np.mean(clipped * advantages))
    # d loss / d logits: active only strictly inside the clip band
    active = (ratio > 1.0 - clip) & (ratio < 1.0 + clip)
    coeff = np.where(active, ratio * advantages, 0.0) / len(batch)
    grads = mlp_backward_batch(params, feats, [s * coeff[:, None] for s in seeds])
    kl = float(np.mean(ratio - 1.0 - np.log(np.clip(ratio, 1e-12, None))))
    return loss, grads, kl


def value_loss(batch: Sequence[LowExperience | HighExperience],
               params: MlpParams) -> tuple[float, Gradients]:
    """MSE against stored discounted-return targets, with its gradient."""
    feats = np.stack([e.features for e in batch])
    targets = np.array([e.value_target for e in batch])
    (pred,) = mlp_forward_batch(params, feats)
    err = pred[:, 0] - targets
    mse = float(np.mean(err ** 2))
    seed = (2.0 / len(batch)) * err
    grads = mlp_backward_batch(params, feats, [seed[:, None]])
    return mse, grads


# ---------------------------------------------------------------------------
# update operations
# ---------------------------------------------------------------------------

def update_low(
    agent: LowAgent,
    rng: np.random.Generator,
    epochs: int | None = None,
    minibatch: int | None = None,
    use_high_advantage: bool = True,
) -> dict:
    """One policy-updating phase: snapshot old params, several clipped steps.

    Stops early when the KL estimate against the snapshot exceeds the limit.
    """
    cfg = agent.cfg
    epochs = cfg.update_epochs if epochs is None else epochs
    minibatch = cfg.minibatch if minibatch is None else minibatch
    if len(agent.replay) == 0:
        return {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "steps": 0}
    agent.policy_old = agent.policy.copy()
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "steps": 0}
    for _ in range(epochs):
        batch = agent.replay.sample(rng, minibatch)
        adv = np.array([advantage_low(e, agent.value, cfg.gamma_low) for e in batch])
        if use_high_advantage:
            adv = adv + np.array([e.adv_high for e in batch])
        p_loss, p_grads, kl = policy_loss(batch, adv, agent.policy, agent.policy_old, cfg.clip)
        agent.policy, agent.policy_adam = apply_update(
            agent.policy, p_grads.scale_(-1.0), cfg.learning_rate, agent.policy_adam
        )
        v_loss, v_grads = value_loss(batch, agent.value)
        agent.value, agent.value_adam = apply_update(
            agent.value, v_grads, cfg.learning_rate, agent.value_adam
        )
        stats = {"policy_loss": p_loss, "value_loss": v_loss, "kl": kl,
                 "steps": stats["steps"] + 1}
        if kl > cfg.kl_limit:
            break
    return stats


def update_tail_value(agent: HighAgent, rng: np.random.Generator,
                      steps: int | None = None, minibatch: int | None = None) -> dict:
    """Regress the satellite's tail value toward discounted cycle returns."""
    cfg = agent.cfg
    steps = cfg.tail_update_steps if steps is None else steps
    minibatch = cfg.minibatch if minibatch is None else minibatch
    if len(agent.replay) == 0:
        return {"tail_loss": 0.0, "steps": 0}
    last = 0.0
    done = 0
    for _ in range(steps):
        batch = agent.replay.sample(rng, minibatch)
        loss, grads = value_loss(batch, agent.tail_value)
        agent.tail_value, agent.tail_adam = apply_update(
            agent.tail_value, grads, cfg.learning_rate, agent.tail_adam
        )
        last = loss
        done += 1
    return {"tail_loss": last, "steps": done}


# ---------------------------------------------------------------------------
# trajectory generation and rollout
# ---------------------------------------------------------------------------

def gen_trajectory(agent: LowAgent, features: np.ndarray, horizon: int) -> list[LowAction]:
    """Greedy future actions under the updated policy on persistence-predicted states.

    The predictor keeps the last observed state, so the greedy action repeats;
    the trajectory length is exactly ``horizon``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    action, _ = act_low(agent.policy, features, None, mode="greedy")
    return [action] * horizon


def neutral_trajectory(grid: OffsetGrid, pool: RbPool, horizon: int) -> list[LowAction]:
    """Zero-offset, all-groups reference used by the independent ablation."""
    action = LowAction(group_bits=(1,) * pool.num_groups,
                       rx_offsets=(grid.zero_index, grid.zero_index))
    return [action] * horizon


def rollout_high(agent: HighAgent, state: HighState, trajectory: Sequence[LowAction],
                 model) -> HighAction:
    """Finite-step rollout: argmax over candidates of simulated discounted
    cycle rewards plus the learned tail value at the horizon; ties break to
    the lowest candidate index."""
    if not agent.candidates:
        raise ValueError("empty candidate table")
    cfg = agent.cfg
    depth = cfg.rollout_depth
    if len(trajectory) % depth != 0:
        raise ValueError("trajectory length must be divisible by the rollout depth")
    per_cycle = len(trajectory) // depth
    ms0 = model.initial(state)
    best_action, best_score = None, -np.inf
    for cand in agent.candidates:
        ms = ms0
        score = 0.0
        for p in range(depth):
            reward, ms = model.step(ms, cand, trajectory[p * per_cycle:(p + 1) * per_cycle])
            score += cfg.gamma_high ** p * reward * cfg.reward_scale
        tail_feat = featurize_high(model.high_state(ms).vector())
        score += cfg.gamma_high ** depth * value_of(agent.tail_value, tail_feat)
        if score > best_score:
            best_score, best_action = score, cand
    return best_action


# ---------------------------------------------------------------------------
# training and evaluation loops
# ---------------------------------------------------------------------------

def _finalize_high_targets(pending: list[HighExperience], gamma: float) -> None:
    acc = 0.0
    for exp in reversed(pending):
        acc = exp.reward + gamma * acc
        exp.value_target = acc


def run_episode(
    env: DownlinkEnv,
    low_agent: LowAgent,
    high_agent: HighAgent,
    rng: np.random.Generator,
    mode: str = "proposed",
    learn: bool = True,
    episode_seed: int | None = None,
) -> dict:
    """One full episode of the sequential two-phase scheme.

    With ``learn=False`` this is a frozen greedy evaluation: no storage, no
    updates, deterministic given (params, episode_seed).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cfg = low_agent.cfg
    t_cycle = env.times.slots_per_cycle
    horizon = cfg.rollout_depth * t_cycle
    use_high_adv = mode == "proposed"
    share_trajectory = mode != "independent"
    act_mode = "sample" if learn else "greedy"

    env.reset(episode_seed)
    a_next: HighAction = initial_high_action(env.pool, env.grid)
    prev_high: tuple[np.ndarray, HighAction] | None = None
    prev_low_exps: list[LowExperience] = []
    pending_high: list[HighExperience] = []
    cycle_rows: list[dict] = []

    while True:
        s_high, r_prev = env.step_high(a_next)
        feats_high = featurize_high(s_high.vector())
        if r_prev is not None and prev_high is not None:
            r_scaled = r_prev * cfg.reward_scale
            if learn:
                adv_h = advantage_high(r_scaled, prev_high[0], feats_high,
                                       high_agent.tail_value, cfg.gamma_high)
                for exp in prev_low_exps:
                    exp.adv_high = adv_h
                low_agent.replay.extend(prev_low_exps)
                pending_high.append(HighExperience(
                    features=prev_high[0], action=prev_high[1], reward=r_scaled,
                    next_features=feats_high, cycle=env.cycle,
                ))
            if cycle_rows:
                cycle_rows[-1]["reward_high"] = r_prev
        if env.done:
            break
        prev_high = (feats_high, a_next)

        feats = featurize_low(env.low_state.vector())
        cycle_exps: list[LowExperience] = []
        update_stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "steps": 0}
        for _ in range(t_cycle):
            action, logp = act_low(low_agent.policy, feats, rng, act_mode)
            result = env.step_low(action)
            next_feats = featurize_low(result.state.vector())
            if learn:
                cycle_exps.append(LowExperience(
                    features=feats, action=action, logp=logp,
                    reward=result.reward * cfg.reward_scale,
                    next_features=next_feats, cycle=env.cycle,
                ))
                if env.slot % cfg.low_update_every == 0 and len(low_agent.replay) >= cfg.minibatch:
                    update_stats = update_low(low_agent, rng,
                                              use_high_advantage=use_high_adv)
            feats = next_feats
        if learn:
            targets = compute_value_targets([e.reward for e in cycle_exps], cfg.gamma_low)
            for exp, tgt in zip(cycle_exps, targets):
                exp.value_target = tgt
            prev_low_exps = cycle_exps

        if share_trajectory:
            trajectory = gen_trajectory(low_agent, feats, horizon)
        else:
            trajectory = neutral_trajectory(env.grid, env.pool, horizon)
        a_next = rollout_high(high_agent, env.peek_high_state(), trajectory,
                              env.rollout_model(cfg.rollout_demand_quantile))
        tail_stats = update_tail_value(high_agent, rng) if learn else {"tail_loss": 0.0}

        slots = env.trace[-t_cycle:]
        cycle_rows.append({
            "cycle": env.cycle,
            "reward_low": float(np.mean([r.smoothed_reward for r in slots])),
            "reward_high": 0.0,  # filled when the cycle closes
            "throughput": float(np.mean([min(r.served, r.demand) for r in slots])),
            "satisfactory_error": float(np.mean([abs(r.omega) for r in slots])),
            "groups_used": float(np.mean([r.groups_used for r in slots])),
            "policy_loss": update_stats["policy_loss"],
            "value_loss": update_stats["value_loss"],
            "kl": update_stats["kl"],
            "tail_loss": tail_stats["tail_loss"],
        })

    if learn and pending_high:
        _finalize_high_targets(pending_high, cfg.gamma_high)
        high_agent.replay.extend(pending_high)

    trace = env.trace
    return {
        "cycles": cycle_rows,
        "return_low": float(np.mean([r.smoothed_reward for r in trace])) if trace else 0.0,
        "return_high": float(np.mean([row["reward_high"] for row in cycle_rows])) if cycle_rows else 0.0,
        "throughput": float(np.mean([min(r.served, r.demand) for r in trace])) if trace else 0.0,
        "satisfactory_error": float(np.mean([abs(r.omega) for r in trace])) if trace else 0.0,
        "groups_used": float(np.mean([r.groups_used for r in trace])) if trace else 0.0,
    }


def train(
    env: DownlinkEnv,
    low_agent: LowAgent,
    high_agent: HighAgent,
    episodes: int,
    epsilon: float = 0.0,
    mode: str = "proposed",
    seed: int = 0,
) -> list[dict]:
    """Run the sequential training loop for up to ``episodes`` episodes.

    Stops early when the max absolute parameter change across all networks
    over one episode drops below ``epsilon``. Returns one log row per cycle.
    """
    log: list[dict] = []
    for ep in range(episodes):
        ss = np.random.SeedSequence((seed, ep))
        rng = np.random.default_rng(ss)
        episode_seed = int(ss.generate_state(1)[0])
        before = np.concatenate([low_agent.params_flat(), high_agent.params_flat()])
        summary = run_episode(env, low_agent, high_agent, rng, mode=mode,
                              learn=True, episode_seed=episode_seed)
        after = np.concatenate([low_agent.params_flat(), high_agent.params_flat()])
        change = float(np.max(np.abs(after - before), initial=0.0))
        for row in summary["cycles"]:
            log.append({"episode": ep, "param_change": change, **row})
        if epsilon > 0.0 and change < epsilon:
            break
    return log


def evaluate(
    env: DownlinkEnv,
    low_agent: LowAgent,
    high_agent: HighAgent,
    episode_seeds: Sequence[int],
    mode: str = "proposed",
) -> list[dict]:
    """Frozen greedy evaluation episodes (one summary dict per seed)."""
    out = []
    for s in episode_seeds:
        rng = np.random.default_rng(s)  # unused in greedy mode, kept for symmetry
        out.append(run_episode(env, low_agent, high_agent, rng, mode=mode,
                               learn=False, episode_seed=int(s)))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def _pack_params(prefix: str, p: MlpParams, store: dict) -> dict:
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        store[f"{prefix}_w{i}"] = w
        store[f"{prefix}_b{i}"] = b
    return {
        "layer_sizes": list(p.layer_sizes),
        "heads": [list(h) for h in p.heads],
        "hidden_activation": p.hidden_activation,
        "layers": len(p.weights),
    }


def _unpack_params(prefix: str, meta: dict, data) -> MlpParams:
    weights = [np.array(data[f"{prefix}_w{i}"]) for i in range(meta["layers"])]
    biases = [np.array(data[f"{prefix}_b{i}"]) for i in range(meta["layers"])]
    heads = tuple((str(k), int(n)) for k, n in meta["heads"])
    return MlpParams(tuple(meta["layer_sizes"]), weights, biases, heads,
                     meta["hidden_activation"])


def save_checkpoint(path, low_agent: LowAgent, high_agent: HighAgent,
                    extra: dict | None = None) -> None:
    """Single-file .npz checkpoint: all network parameters plus replay cursors."""
    store: dict = {}
    manifest = {
        "version": CHECKPOINT_VERSION,
        "policy": _pack_params("policy", low_agent.policy, store),
        "value": _pack_params("value", low_agent.value, store),
        "tail": _pack_params("tail", high_agent.tail_value, store),
        "replay_low_len": len(low_agent.replay),
        "replay_high_len": len(high_agent.replay),
        "extra": extra or {},
    }
    store["manifest"] = np.frombuffer(json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **store)


def load_checkpoint(path, low_agent: LowAgent, high_agent: HighAgent) -> dict:
    """Restore network parameters saved by :func:`save_checkpoint`."""
    with np.load(path) as data:
        manifest = json.loads(bytes(data["manifest"]).decode())
        if manifest["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest['version']}")
        low_agent.policy = _unpack_params("policy", manifest["policy"], data)
        low_agent.policy_old = low_agent.policy.copy()
        low_agent.value = _unpack_params("value", manifest["value"], data)
        high_agent.tail_value = _unpack_params("tail", manifest["tail"], data)
    low_agent.policy_adam = AdamState.zeros_like(low_agent.policy)
    low_agent.value_adam = AdamState.zeros_like(low_agent.value)
    high_agent.tail_adam = AdamState.zeros_like(high_agent.tail_value)
    return manifest["extra"]
