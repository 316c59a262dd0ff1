import math

import numpy as np
import pytest

from leodrl.collab import (
    AgentsConfig,
    HighAgent,
    HighExperience,
    LowAgent,
    LowExperience,
    Replay,
    act_low,
    action_logp,
    advantage_high,
    advantage_low,
    build_candidate_table,
    compute_value_targets,
    evaluate,
    featurize_high,
    featurize_low,
    gen_trajectory,
    load_checkpoint,
    policy_loss,
    rollout_high,
    run_episode,
    save_checkpoint,
    train,
    update_low,
    update_tail_value,
    value_loss,
    value_of,
)
from leodrl.env import HighAction, HighState, LowAction
from leodrl.link import OffsetGrid, RbPool
from leodrl.numkit import MlpParams, init_mlp

from conftest import tiny_agents, tiny_env

GRID = OffsetGrid()
POOL = RbPool.contiguous(12, 3)


def zero_policy(input_dim=4, n_groups=3):
    heads = (("categorical", GRID.size), ("categorical", GRID.size), ("bernoulli", n_groups))
    out = GRID.size * 2 + n_groups
    return MlpParams(
        (input_dim, out),
        [np.zeros((out, input_dim))],
        [np.zeros(out)],
        heads,
    )


def zero_value(input_dim=4):
    return MlpParams((input_dim, 1), [np.zeros((1, input_dim))], [np.zeros(1)], (("scalar", 1),))


def make_exp(features, action, reward=0.0, next_features=None, value_target=0.0, adv_high=0.0):
    return LowExperience(
        features=np.asarray(features, float),
        action=action,
        logp=0.0,
        reward=reward,
        next_features=np.asarray(next_features if next_features is not None else features, float),
        cycle=0,
        value_target=value_target,
        adv_high=adv_high,
    )


class TestActLow:
    def test_zero_network_uniform(self):
        p = zero_policy()
        rng = np.random.default_rng(60)
        x = np.zeros(4)
        n = 50_000
        theta_counts = np.zeros(GRID.size)
        bit_counts = np.zeros(3)
        for _ in range(n):
            a, _ = act_low(p, x, rng, "sample")
            theta_counts[a.rx_offsets[0]] += 1
            bit_counts += np.array(a.group_bits)
        np.testing.assert_allclose(theta_counts / n, np.full(GRID.size, 1 / GRID.size), atol=0.02)
        np.testing.assert_allclose(bit_counts / n, np.full(3, 0.5), atol=0.02)

    def test_greedy_deterministic(self):
        rng = np.random.default_rng(61)
        p = init_mlp(rng, 4, (8,), zero_policy().heads)
        x = rng.standard_normal(4)
        a1, lp1 = act_low(p, x, None, "greedy")
        a2, lp2 = act_low(p, x, None, "greedy")
        assert a1 == a2 and lp1 == lp2

    def test_sampling_frequency_matches_head_probs(self):
        rng = np.random.default_rng(62)
        p = init_mlp(rng, 4, (8,), zero_policy().heads)
        x = rng.standard_normal(4)
        from leodrl.numkit import mlp_forward

        theta_logits, _, _ = mlp_forward(p, x)
        z = theta_logits - theta_logits.max()
        probs = np.exp(z) / np.exp(z).sum()
        counts = np.zeros(GRID.size)
        n = 50_000
        for _ in range(n):
            a, _ = act_low(p, x, rng, "sample")
            counts[a.rx_offsets[0]] += 1
        np.testing.assert_allclose(counts / n, probs, atol=0.02)

    def test_logp_consistency(self):
        rng = np.random.default_rng(63)
        p = init_mlp(rng, 4, (8,), zero_policy().heads)
        x = rng.standard_normal(4)
        a, lp = act_low(p, x, rng, "sample")
        assert lp == pytest.approx(action_logp(p, x, a), abs=1e-12)


class TestAdvantages:
    def test_zero_critic(self):
        v = zero_value()
        e = make_exp(np.ones(4), LowAction((1, 0, 1), rx_offsets=(0, 0)), reward=3.5)
        assert advantage_low(e, v, 0.99) == pytest.approx(3.5)

    def test_constant_critic_unit_gamma(self):
        v = zero_value()
        v.biases[0][0] = 7.0  # V == 7 everywhere
        e = make_exp(np.ones(4), LowAction((1, 1, 1), rx_offsets=(0, 0)), reward=2.0)
        assert advantage_low(e, v, 1.0) == pytest.approx(2.0)

    def test_hand_case(self):
        # R = 2, V(s) = 1, V(s') = 3, gamma = 0.5 -> 2 + 1.5 - 1 = 2.5
        v = zero_value(input_dim=1)
        v.weights[0][0, 0] = 1.0  # V(x) = x
        e = make_exp([1.0], LowAction((1,) * 3, rx_offsets=(0, 0)), reward=2.0, next_features=[3.0])
        assert advantage_low(e, v, 0.5) == pytest.approx(2.5)

    def test_high_zero_net(self):
        v = zero_value(input_dim=5)
        assert advantage_high(4.2, np.ones(5), np.zeros(5), v, 0.99) == pytest.approx(4.2)

    def test_high_hand_case(self):
        v = zero_value(input_dim=1)
        v.weights[0][0, 0] = 1.0
        got = advantage_high(2.0, np.array([1.0]), np.array([3.0]), v, 0.5)
        assert got == pytest.approx(2.5)


class TestValueTargets:
    def test_hand_case(self):
        assert compute_value_targets([1.0, 2.0, 4.0], 0.5) == [3.0, 4.0, 4.0]

    def test_gamma_zero_is_immediate(self):
        rewards = [3.0, -1.0, 2.0]
        assert compute_value_targets(rewards, 0.0) == rewards


class TestPolicyLoss:
    def test_identical_policies_identity(self):
        rng = np.random.default_rng(64)
        p = init_mlp(rng, 4, (8,), zero_policy().heads)
        batch = [
            make_exp(rng.standard_normal(4), LowAction((1, 0, 1), rx_offsets=(2, 5)))
            for _ in range(6)
        ]
        adv = rng.standard_normal(6)
        loss, _, kl = policy_loss(batch, adv, p, p, clip=0.2)
        assert loss == pytest.approx(float(adv.mean()), abs=0)
        assert kl == pytest.approx(0.0, abs=1e-15)

    def test_zero_advantage_zero_gradient(self):
        rng = np.random.default_rng(65)
        p = init_mlp(rng, 4, (8,), zero_policy().heads)
        q = init_mlp(rng, 4, (8,), zero_policy().heads)
        batch = [make_exp(rng.standard_normal(4), LowAction((0, 1, 0), rx_offsets=(1, 3)))]
        loss, grads, _ = policy_loss(batch, np.zeros(1), p, q, clip=0.2)
        assert loss == 0.0
        assert grads.max_abs() == 0.0

    def test_clip_arithmetic(self):
        # force ratio 1.3 through the first categorical head; clip at 1.2
        base = zero_policy(input_dim=1, n_groups=1)
        new = base.copy()
        a = math.log(13.0 / 7.0)  # sigmoid-space shift giving P_new(0)/P_old(0) = 1.3 on 2 logits
        # use a 2-way head: rebuild nets with categorical(2) heads to keep the arithmetic exact
        heads = (("categorical", 2), ("categorical", 2), ("bernoulli", 1))
        old = MlpParams((1, 5), [np.zeros((5, 1))], [np.zeros(5)], heads)
        new = MlpParams((1, 5), [np.zeros((5, 1))], [np.array([a, 0.0, 0.0, 0.0, 0.0])], heads)
        action = LowAction((0,), rx_offsets=(0, 0))
        batch = [make_exp([1.0], action)]
        advantage = np.array([2.0])
        ratio = (math.exp(a) / (1 + math.exp(a))) / 0.5
        assert ratio == pytest.approx(1.3, rel=1e-12)
        loss, grads, _ = policy_loss(batch, advantage, new, old, clip=0.2)
        assert loss == pytest.approx(1.2 * 2.0, rel=1e-12)
        assert grads.max_abs() == 0.0  # clipped sample contributes no gradient

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            policy_loss([], np.zeros(0), zero_policy(), zero_policy(), 0.2)


class TestValueLoss:
    def test_exact_fit_zero_loss(self):
        v = zero_value(input_dim=1)
        v.weights[0][0, 0] = 1.0  # V(x) = x
        batch = [
            make_exp([2.0], LowAction((1, 1, 1), rx_offsets=(0, 0)), value_target=2.0),
            make_exp([5.0], LowAction((1, 1, 1), rx_offsets=(0, 0)), value_target=5.0),
        ]
        loss, grads = value_loss(batch, v)
        assert loss == pytest.approx(0.0, abs=1e-18)
        assert grads.max_abs() == pytest.approx(0.0, abs=1e-12)

    def test_loss_decreases_on_frozen_batch(self):
        rng = np.random.default_rng(66)
        from leodrl.numkit import AdamState, apply_update

        v = init_mlp(rng, 3, (16,), (("scalar", 1),))
        batch = [
            make_exp(rng.standard_normal(3), LowAction((1, 0, 1), rx_offsets=(0, 0)),
                     value_target=float(rng.standard_normal()))
            for _ in range(16)
        ]
        first, _ = value_loss(batch, v)
        state = AdamState.zeros_like(v)
        for _ in range(100):
            loss, grads = value_loss(batch, v)
            v, state = apply_update(v, grads, 1e-2, state)
        final, _ = value_loss(batch, v)
        assert final < first


class TestUpdateLow:
    def _agent(self, seed=0):
        env = tiny_env(seed=seed)
        low, _ = tiny_agents(env, seed=seed)
        return low

    def test_zero_advantage_leaves_policy_unchanged(self):
        agent = self._agent()
        # zero critic and zero rewards -> all advantages vanish
        agent.value = zero_value(input_dim=agent.policy.input_dim)
        agent.value_adam = None
        from leodrl.numkit import AdamState

        agent.value_adam = AdamState.zeros_like(agent.value)
        rng = np.random.default_rng(67)
        for _ in range(40):
            feats = rng.standard_normal(agent.policy.input_dim)
            agent.replay.push(make_exp(feats, LowAction((1, 0, 1), rx_offsets=(3, 3))))
        before = agent.policy.flat()
        update_low(agent, rng, epochs=3, minibatch=8)
        assert np.array_equal(agent.policy.flat(), before)

    def test_bandit_preference_shifts(self):
        # two-arm bandit on the theta head: offset 0 pays +1, others pay -1
        agent = self._agent()
        rng = np.random.default_rng(68)
        feats = np.zeros(agent.policy.input_dim)
        from leodrl.numkit import mlp_forward

        def prob_arm0():
            logits = mlp_forward(agent.policy, feats)[0]
            z = logits - logits.max()
            return float(np.exp(z[0]) / np.exp(z).sum())

        start = prob_arm0()
        for _ in range(50):
            agent.replay = Replay(agent.cfg.replay_low)
            for _ in range(32):
                a, _ = act_low(agent.policy, feats, rng, "sample")
                reward = 1.0 if a.rx_offsets[0] == 0 else -1.0
                agent.replay.push(make_exp(feats, a, reward=reward, value_target=reward))
            update_low(agent, rng, epochs=2, minibatch=32)
        assert prob_arm0() > start
        assert prob_arm0() > 1.0 / GRID.size


class TestTrajectory:
    def test_horizon_one_is_single_greedy(self):
        env = tiny_env()
        low, _ = tiny_agents(env)
        feats = np.zeros(low.policy.input_dim)
        traj = gen_trajectory(low, feats, 1)
        greedy, _ = act_low(low.policy, feats, None, "greedy")
        assert traj == [greedy]

    def test_static_state_identical_actions(self):
        env = tiny_env()
        low, _ = tiny_agents(env)
        traj = gen_trajectory(low, np.zeros(low.policy.input_dim), 20)
        assert len(traj) == 20
        assert all(a == traj[0] for a in traj)


class HandModel:
    """Action-indexed rewards, state advances a counter; for rollout tests."""

    def __init__(self, rewards, trace_len=10):
        self.rewards = rewards
        self.trace_len = trace_len

    def initial(self, state):
        return 0

    def high_state(self, ms):
        return HighState(np.zeros(3), np.full(self.trace_len, float(ms)))

    def step(self, ms, action, low_actions):
        return self.rewards[action.groups[0]], ms + 1


class TestRollout:
    def _agent(self, candidates, depth=1, trace_len=10):
        env = tiny_env()
        _, high = tiny_agents(env, rollout_depth=depth)
        high.candidates = candidates
        high.tail_value = zero_value(input_dim=3 + trace_len)
        return high

    def _candidates(self, n):
        return [HighAction(groups=(g,), tx_offsets=(GRID.zero_index, GRID.zero_index))
                for g in range(n)]

    def test_myopic_greedy(self):
        cands = self._candidates(3)
        agent = self._agent(cands, depth=1)
        model = HandModel(rewards=[3.0, 5.0, 4.0])
        state = HighState(np.zeros(3), np.zeros(10))
        traj = [LowAction((1, 1, 1), rx_offsets=(0, 0))] * 10
        assert rollout_high(agent, state, traj, model) == cands[1]

    def test_single_candidate(self):
        cands = self._candidates(1)
        agent = self._agent(cands, depth=1)
        model = HandModel(rewards=[-100.0])
        state = HighState(np.zeros(3), np.zeros(10))
        traj = [LowAction((1, 1, 1), rx_offsets=(0, 0))] * 10
        assert rollout_high(agent, state, traj, model) == cands[0]

    def test_tie_breaks_to_lowest_index(self):
        cands = self._candidates(3)
        agent = self._agent(cands, depth=1)
        model = HandModel(rewards=[5.0, 5.0, 1.0])
        state = HighState(np.zeros(3), np.zeros(10))
        traj = [LowAction((1, 1, 1), rx_offsets=(0, 0))] * 10
        assert rollout_high(agent, state, traj, model) == cands[0]

    def test_depth_two_matches_tree_oracle(self):
        cands = self._candidates(3)
        agent = self._agent(cands, depth=2)
        rewards = [3.0, 5.0, 4.0]
        model = HandModel(rewards=rewards)
        gamma = agent.cfg.gamma_high
        scale = agent.cfg.reward_scale
        # exhaustive depth-2 tree enumeration over both decision levels
        best_tree, best_score = None, -np.inf
        for i, a1 in enumerate(cands):
            r1, ms = model.step(model.initial(None), a1, [])
            inner = max(
                model.step(ms, a2, [])[0] * scale * gamma for a2 in cands
            )
            score = r1 * scale + inner  # tail value is identically zero
            if score > best_score:
                best_score, best_tree = score, a1
        state = HighState(np.zeros(3), np.zeros(10))
        traj = [LowAction((1, 1, 1), rx_offsets=(0, 0))] * 2
        chosen = rollout_high(agent, state, traj, model)
        assert chosen == best_tree

    def test_empty_candidates_rejected(self):
        agent = self._agent(self._candidates(1), depth=1)
        agent.candidates = []
        with pytest.raises(ValueError):
            rollout_high(agent, HighState(np.zeros(3), np.zeros(10)),
                         [LowAction((1, 1, 1), rx_offsets=(0, 0))] * 10, HandModel([1.0]))


class TestTailValue:
    def test_exact_fit_no_change(self):
        env = tiny_env()
        _, high = tiny_agents(env)
        high.tail_value = zero_value(input_dim=13)
        from leodrl.numkit import AdamState

        high.tail_adam = AdamState.zeros_like(high.tail_value)
        rng = np.random.default_rng(69)
        for _ in range(10):
            high.replay.push(HighExperience(
                features=rng.standard_normal(13), action=HighAction(groups=(0,), tx_offsets=(3, 3)),
                reward=0.0, next_features=np.zeros(13), cycle=0, value_target=0.0,
            ))
        before = high.tail_value.flat()
        update_tail_value(high, rng, steps=5, minibatch=4)
        assert np.array_equal(high.tail_value.flat(), before)

    def test_loss_decreases(self):
        env = tiny_env()
        _, high = tiny_agents(env)
        rng = np.random.default_rng(70)
        batch = []
        for _ in range(16):
            exp = HighExperience(
                features=rng.standard_normal(13), action=HighAction(groups=(0,), tx_offsets=(3, 3)),
                reward=0.0, next_features=np.zeros(13), cycle=0,
                value_target=float(rng.standard_normal()),
            )
            high.replay.push(exp)
            batch.append(exp)
        first, _ = value_loss(batch, high.tail_value)
        for _ in range(100):
            update_tail_value(high, rng, steps=1, minibatch=16)
        final, _ = value_loss(batch, high.tail_value)
        assert final < first


class TestReplay:
    def test_fifo_eviction(self):
        r = Replay(3)
        for i in range(5):
            r.push(i)
        assert len(r) == 3
        assert sorted(r._items) == [2, 3, 4]

    def test_capacity_never_exceeded(self):
        r = Replay(10)
        for i in range(1000):
            r.push(i)
            assert len(r) <= 10


class TestTrainLoop:
    def test_zero_episodes(self):
        env = tiny_env()
        low, high = tiny_agents(env)
        before = np.concatenate([low.params_flat(), high.params_flat()])
        log = train(env, low, high, episodes=0)
        after = np.concatenate([low.params_flat(), high.params_flat()])
        assert log == []
        assert np.array_equal(before, after)

    def test_deterministic_logs(self):
        def run():
            env = tiny_env(seed=3, episode_slots=20)
            low, high = tiny_agents(env, seed=3)
            return train(env, low, high, episodes=2, seed=11)

        assert run() == run()

    def test_modes_run(self):
        for mode in ("proposed", "single_estimation", "independent"):
            env = tiny_env(seed=5, episode_slots=20)
            low, high = tiny_agents(env, seed=5)
            log = train(env, low, high, episodes=1, mode=mode, seed=1)
            assert len(log) == 2  # two cycles per 20-slot episode

    def test_evaluate_is_frozen_and_deterministic(self):
        env = tiny_env(seed=9, episode_slots=20)
        low, high = tiny_agents(env, seed=9)
        train(env, low, high, episodes=1, seed=2)
        before = np.concatenate([low.params_flat(), high.params_flat()])
        r1 = evaluate(env, low, high, episode_seeds=[101, 102])
        r2 = evaluate(env, low, high, episode_seeds=[101, 102])
        after = np.concatenate([low.params_flat(), high.params_flat()])
        assert np.array_equal(before, after)
        assert r1 == r2

    def test_high_advantage_broadcast(self):
        env = tiny_env(seed=13, episode_slots=30)
        low, high = tiny_agents(env, seed=13)
        rng = np.random.default_rng(0)
        run_episode(env, low, high, rng, learn=True, episode_seed=1)
        by_cycle = {}
        for exp in low.replay._items:
            by_cycle.setdefault(exp.cycle, set()).add(exp.adv_high)
        for cycle, values in by_cycle.items():
            assert len(values) == 1  # identical broadcast within each cycle


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        env = tiny_env(seed=17, episode_slots=20)
        low, high = tiny_agents(env, seed=17)
        train(env, low, high, episodes=1, seed=4)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, low, high, extra={"episodes": 1})
        env2 = tiny_env(seed=17, episode_slots=20)
        low2, high2 = tiny_agents(env2, seed=99)
        extra = load_checkpoint(path, low2, high2)
        assert extra == {"episodes": 1}
        assert np.array_equal(low.policy.flat(), low2.policy.flat())
        assert np.array_equal(low.value.flat(), low2.value.flat())
        assert np.array_equal(high.tail_value.flat(), high2.tail_value.flat())
        # restored agents evaluate identically
        a = evaluate(env, low, high, [7])
        b = evaluate(env2, low2, high2, [7])
        assert a == b


class TestFeaturize:
    def test_low_monotone_bounded(self):
        vec = np.array([0.0, 1e7, 1e9])
        f = featurize_low(vec)
        assert f[0] == 0.0 and f[1] < f[2] < 2.0

    def test_high_splits_position_and_trace(self):
        vec = np.concatenate([np.full(3, 1e7), np.full(4, 99.0)])
        f = featurize_high(vec)
        np.testing.assert_allclose(f[:3], 1.0)
        assert np.all(f[3:] == featurize_low(np.full(4, 99.0)))
