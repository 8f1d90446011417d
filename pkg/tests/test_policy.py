"""Tests for the model-free goal-conditioned baseline."""
import numpy as np
import pytest

from pushkit.evaluate import FIXTURES
from pushkit.geometry import Pose2D
from pushkit.metrics import MID
from pushkit.model import KIND_MODEL, write_array_file
from pushkit.policy import (
    ACTOR_DIMS,
    AgentWeights,
    PolicyTrainConfig,
    ReplayBuffer,
    Transition,
    _Adam,
    _soft_update,
    collect_policy_episode,
    critic_value,
    ddpg_update,
    her_relabel,
    load_agent,
    mdp_state,
    mlp_backward,
    mlp_forward,
    mlp_init,
    policy_action,
    reward,
    save_agent,
    scripted_action,
    train_policy,
)
from pushkit.sim import PushEnv, SimConfig, WorldState, behind_boundary_offset
from pushkit.dataset import sample_start_goal


def make_state(ox=0.0, oy=0.0, oth=0.0, rx=0.0, ry=0.0, gx=0.0, gy=0.0, gth=0.0):
    return np.array([ox, oy, oth, rx, ry, gx, gy, gth])


def make_transitions(n, rng):
    """Episode-shaped transitions with distinct achieved poses."""
    out = []
    for i in range(n):
        s = rng.normal(size=8)
        ns = s + rng.normal(scale=0.01, size=8)
        ns[:3] = [0.1 * (i + 1), 0.0, 0.0]
        out.append(Transition(s, rng.normal(size=2), -1.0, ns, False, ns[:3].copy()))
    return out


class TestMdpPieces:
    def test_state_layout(self):
        world = WorldState(Pose2D(1, 2, 3), (4, 5), False)
        np.testing.assert_array_equal(mdp_state(world, Pose2D(6, 7, 0.5)),
                                      [1, 2, 3, 4, 5, 6, 7, 0.5])

    def test_reward_is_binary_and_strict(self):
        assert reward(make_state()) == 1.0
        assert reward(make_state(ox=0.1)) == -1.0
        # exactly on the mid-tier x bound fails the strict inequality
        assert reward(make_state(ox=MID.ex)) == -1.0
        assert reward(make_state(ox=MID.ex - 1e-9)) == 1.0

    def test_reward_wraps_heading(self):
        assert reward(make_state(oth=np.pi - 0.01, gth=-np.pi + 0.01)) == 1.0


class TestHerRelabel:
    def test_own_next_pose_goal_gets_positive_reward(self):
        rng = np.random.default_rng(0)
        trs = make_transitions(1, rng)
        extra = her_relabel(trs, 3, rng)
        assert len(extra) == 3
        for tr in extra:  # only later achieved pose available is its own
            np.testing.assert_array_equal(tr.next_state[5:8], trs[0].achieved_goal)
            assert tr.reward == 1.0
            assert tr.done

    def test_goals_come_from_same_or_later_steps(self):
        rng = np.random.default_rng(1)
        trs = make_transitions(6, rng)
        extra = her_relabel(trs, 4, rng)
        assert len(extra) == 24
        achieved = np.array([t.achieved_goal for t in trs])
        for i, tr in enumerate(trs):
            for e in extra[4 * i:4 * (i + 1)]:
                matches = np.where((achieved == e.state[5:8]).all(axis=1))[0]
                assert matches.size and matches.max() >= i

    def test_zero_k_future_adds_nothing(self):
        rng = np.random.default_rng(2)
        assert her_relabel(make_transitions(3, rng), 0, rng) == []

    def test_deterministic_for_fixed_seed(self):
        trs = make_transitions(4, np.random.default_rng(3))
        a = her_relabel(trs, 2, np.random.default_rng(9))
        b = her_relabel(trs, 2, np.random.default_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.state, y.state)
            assert x.reward == y.reward


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(2)
        rng = np.random.default_rng(0)
        trs = make_transitions(3, rng)
        buf.add(trs)
        assert buf.size == 2
        batch = buf.sample(64, rng)
        kept = np.array([t.state for t in trs[1:]])
        for row in batch["state"]:
            assert any(np.array_equal(row, k) for k in kept)
        # the evicted oldest state never appears
        assert not any(np.array_equal(row, trs[0].state) for row in batch["state"])

    def test_size_never_exceeds_capacity(self):
        buf = ReplayBuffer(5)
        buf.add(make_transitions(12, np.random.default_rng(1)))
        assert buf.size == 5

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4).sample(1, np.random.default_rng(0))

    def test_zero_capacity_rejected(self):
        with pytest.raises(ValueError):
            ReplayBuffer(0)


class TestDenseNets:
    def fd_check(self, dims, out_scale):
        rng = np.random.default_rng(4)
        params = mlp_init(dims, rng)
        x = rng.normal(size=(3, dims[0]))

        def loss(ps):
            y, _ = mlp_forward(ps, x, out_scale)
            return 0.5 * float(np.sum(y * y))

        y, acts = mlp_forward(params, x, out_scale)
        grads, dx = mlp_backward(params, acts, y, out_scale)
        h = 1e-6
        for k, p in enumerate(params):
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + h
                up = loss(params)
                p[idx] = orig - h
                dn = loss(params)
                p[idx] = orig
                fd = (up - dn) / (2 * h)
                assert abs(grads[k][idx] - fd) < 1e-5 * max(1.0, abs(fd))

    def test_gradients_linear_output(self):
        self.fd_check((4, 5, 3), None)

    def test_gradients_bounded_output(self):
        self.fd_check((4, 5, 2), 0.005)

    def test_input_gradient(self):
        rng = np.random.default_rng(5)
        params = mlp_init((3, 4, 2), rng)
        x = rng.normal(size=(1, 3))
        y, acts = mlp_forward(params, x)
        _, dx = mlp_backward(params, acts, y)
        h = 1e-6
        for j in range(3):
            xp, xm = x.copy(), x.copy()
            xp[0, j] += h
            xm[0, j] -= h
            fd = (0.5 * np.sum(mlp_forward(params, xp)[0] ** 2)
                  - 0.5 * np.sum(mlp_forward(params, xm)[0] ** 2)) / (2 * h)
            assert abs(dx[0, j] - fd) < 1e-6 * max(1.0, abs(fd))

    def test_adam_first_step_closed_form(self):
        params = [np.array([1.0, -2.0])]
        grads = [np.array([0.5, -0.25])]
        opt = _Adam.like(params)
        opt.update(params, grads, lr=0.01)
        expected = np.array([1.0, -2.0]) - 0.01 * grads[0] / (np.abs(grads[0]) + 1e-8)
        np.testing.assert_allclose(params[0], expected, rtol=1e-12)


class TestAgent:
    def test_policy_action_repeatable_and_bounded(self):
        agent = AgentWeights.initial(np.random.default_rng(0))
        s = make_state(gx=0.3, gy=-0.2)
        a = policy_action(agent, s)
        np.testing.assert_array_equal(a, policy_action(agent, s))
        noisy = policy_action(agent, s, True, np.random.default_rng(1),
                              explore_sigma=100.0)
        assert np.all(np.abs(noisy) <= agent.push_magnitude)

    def test_exploration_noise_scale(self):
        agent = AgentWeights.initial(np.random.default_rng(0))
        s = make_state()
        base = policy_action(agent, s)
        rng = np.random.default_rng(2)
        draws = np.array([policy_action(agent, s, True, rng, 0.2) for _ in range(4000)])
        sd = np.std(draws - base, axis=0)
        np.testing.assert_allclose(sd, 0.2 * agent.push_magnitude, rtol=0.08)

    def test_soft_update_contraction(self):
        rng = np.random.default_rng(3)
        main = mlp_init((4, 5, 2), rng)
        target = [p + 1.0 for p in main]
        gap0 = np.linalg.norm(np.concatenate([(t - m).ravel()
                                              for t, m in zip(target, main)]))
        for _ in range(5):
            _soft_update(target, main, 0.25)
        gap = np.linalg.norm(np.concatenate([(t - m).ravel()
                                             for t, m in zip(target, main)]))
        assert gap == pytest.approx(0.75 ** 5 * gap0, rel=1e-12)

    def test_tau_one_copies_mains(self):
        agent = AgentWeights.initial(np.random.default_rng(4), tau=1.0)
        batch = {
            "state": np.random.default_rng(5).normal(size=(8, 8)),
            "action": np.random.default_rng(6).normal(size=(8, 2)) * 0.005,
            "reward": np.full((8, 1), -1.0),
            "next_state": np.random.default_rng(7).normal(size=(8, 8)),
            "done": np.zeros((8, 1)),
        }
        ddpg_update(agent, batch)
        for t, m in zip(agent.actor_target, agent.actor):
            np.testing.assert_array_equal(t, m)
        for t, m in zip(agent.critic_target, agent.critic):
            np.testing.assert_array_equal(t, m)


class TestDdpgUpdate:
    def one_transition_batch(self, agent, rng, r=-1.0):
        return {
            "state": rng.normal(size=(1, 8)),
            "action": rng.uniform(-0.005, 0.005, (1, 2)),
            "reward": np.array([[r]]),
            "next_state": rng.normal(size=(1, 8)),
            "done": np.zeros((1, 1)),
        }

    def test_zero_gamma_target_is_the_reward(self):
        agent = AgentWeights.initial(np.random.default_rng(0), gamma=0.0)
        rng = np.random.default_rng(1)
        batch = self.one_transition_batch(agent, rng, r=1.0)
        q = critic_value(agent, batch["state"], batch["action"])[0]
        loss, _ = ddpg_update(agent, batch)
        assert loss == pytest.approx((q - 1.0) ** 2, rel=1e-12)

    def test_bellman_target_hand_computed(self):
        agent = AgentWeights.initial(np.random.default_rng(2), gamma=0.5)
        rng = np.random.default_rng(3)
        batch = self.one_transition_batch(agent, rng)
        na, _ = mlp_forward(agent.actor_target, batch["next_state"],
                            agent.push_magnitude)
        nq = critic_value(agent, batch["next_state"], na, target=True)[0]
        y = np.clip(-1.0 + 0.5 * nq, -2.0, 2.0)
        q = critic_value(agent, batch["state"], batch["action"])[0]
        loss, _ = ddpg_update(agent, batch)
        assert loss == pytest.approx((q - y) ** 2, rel=1e-10)

    def test_target_clamped_to_return_bound(self):
        agent = AgentWeights.initial(np.random.default_rng(4), gamma=0.98)
        agent.critic_target[-1][...] = 1000.0  # output bias forces a huge value
        rng = np.random.default_rng(5)
        batch = self.one_transition_batch(agent, rng, r=1.0)
        q = critic_value(agent, batch["state"], batch["action"])[0]
        loss, _ = ddpg_update(agent, batch)
        assert loss == pytest.approx((q - 50.0) ** 2, rel=1e-9)

    def test_done_flag_does_not_mask_bootstrap(self):
        rng = np.random.default_rng(6)
        batch = self.one_transition_batch(AgentWeights.initial(rng), rng)
        a = AgentWeights.initial(np.random.default_rng(7))
        b = a.clone()
        la, _ = ddpg_update(a, dict(batch, done=np.zeros((1, 1))))
        lb, _ = ddpg_update(b, dict(batch, done=np.ones((1, 1))))
        assert la == lb

    def test_update_moves_critic_toward_target(self):
        agent = AgentWeights.initial(np.random.default_rng(8), gamma=0.0)
        rng = np.random.default_rng(9)
        batch = self.one_transition_batch(agent, rng, r=1.0)
        for _ in range(300):
            loss, _ = ddpg_update(agent, batch, actor_lr=0.0, critic_lr=1e-3)
        q = critic_value(agent, batch["state"], batch["action"])[0]
        assert abs(q - 1.0) < 0.1


class TestEpisodesAndTraining:
    def p_env(self, rng):
        params = FIXTURES["P"]
        cfg = SimConfig()
        start, goal = sample_start_goal(params, rng, cfg)
        env = PushEnv(params, cfg)
        env.reset(start, goal, behind_boundary_offset(params, start, goal))
        return env, goal

    def test_episode_rewards_and_achieved_goals(self):
        rng = np.random.default_rng(0)
        env, goal = self.p_env(rng)
        act = lambda s: rng.uniform(-0.005, 0.005, 2)
        transitions, reached = collect_policy_episode(env, goal, act, 20)
        assert transitions
        for tr in transitions:
            assert tr.reward in (-1.0, 1.0)
            assert tr.done == (tr.reward > 0)
            np.testing.assert_array_equal(tr.achieved_goal, tr.next_state[:3])
            np.testing.assert_array_equal(tr.state[5:8], [goal.x, goal.y, goal.theta])

    def test_zero_episodes_returns_initialization(self):
        def factory(rng):
            return self.p_env(rng)

        cfg = PolicyTrainConfig(episodes=0, seed=11)
        agent, curve = train_policy(factory, cfg)
        expected = AgentWeights.initial(np.random.default_rng(11))
        for got, want in zip(agent.actor, expected.actor):
            np.testing.assert_array_equal(got, want)
        assert curve.shape == (0, 3)

    def test_training_is_deterministic(self):
        def factory(rng):
            return self.p_env(rng)

        cfg = PolicyTrainConfig(episodes=4, max_steps=6, opt_steps=2,
                                batch_size=16, warmup_episodes=2, seed=3)
        a1, c1 = train_policy(factory, cfg)
        a2, c2 = train_policy(factory, cfg)
        np.testing.assert_array_equal(c1, c2)
        for p, q in zip(a1.actor + a1.critic, a2.actor + a2.critic):
            np.testing.assert_array_equal(p, q)

    def test_invalid_configs_rejected(self):
        for bad in [dict(gamma=1.5), dict(tau=0.0), dict(k_future=-1),
                    dict(explore_eps=2.0), dict(max_steps=0)]:
            with pytest.raises(ValueError):
                PolicyTrainConfig(**bad)


class TestScriptedGenerator:
    def test_zero_action_at_the_goal(self):
        rng = np.random.default_rng(0)
        s = make_state(ox=0.2, oy=0.1, gx=0.2, gy=0.1)
        np.testing.assert_array_equal(scripted_action(s, rng), np.zeros(2))

    def test_noise_free_action_points_at_the_goal(self):
        rng = np.random.default_rng(1)
        s = make_state(gx=0.3, gy=0.0)
        a = scripted_action(s, rng, noise_std=0.0)
        np.testing.assert_allclose(a, [0.005, 0.0], atol=1e-15)
        s2 = make_state(ox=0.1, oy=0.1, gx=0.1, gy=-0.2)
        a2 = scripted_action(s2, rng, noise_std=0.0)
        np.testing.assert_allclose(a2, [0.0, -0.005], atol=1e-12)

    def test_mean_angular_deviation_is_small(self):
        rng = np.random.default_rng(2)
        s = make_state(gx=0.4, gy=0.3)
        bearing = np.arctan2(0.3, 0.4)
        angles = [np.arctan2(*scripted_action(s, rng)[::-1]) - bearing
                  for _ in range(10_000)]
        assert abs(np.mean(angles)) < 0.05
        assert np.std(angles) == pytest.approx(0.3, rel=0.05)


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path):
        agent = AgentWeights.initial(np.random.default_rng(0), gamma=0.9,
                                     tau=0.01, push_magnitude=0.004)
        batch = {
            "state": np.random.default_rng(1).normal(size=(4, 8)),
            "action": np.random.default_rng(2).normal(size=(4, 2)) * 0.004,
            "reward": np.ones((4, 1)),
            "next_state": np.random.default_rng(3).normal(size=(4, 8)),
            "done": np.zeros((4, 1)),
        }
        ddpg_update(agent, batch)
        path = tmp_path / "agent.npz"
        save_agent(path, agent, "cafebabe")
        loaded, config_hash = load_agent(path)
        assert config_hash.startswith("cafebabe")
        assert (loaded.gamma, loaded.tau, loaded.push_magnitude) == (0.9, 0.01, 0.004)
        assert loaded.actor_opt.step == agent.actor_opt.step
        for got, want in zip(
                loaded.actor + loaded.critic + loaded.actor_target + loaded.critic_target,
                agent.actor + agent.critic + agent.actor_target + agent.critic_target):
            np.testing.assert_array_equal(got, want)
        np.testing.assert_array_equal(
            policy_action(loaded, make_state(gx=0.1)),
            policy_action(agent, make_state(gx=0.1)))

    def test_wrong_container_kind_rejected(self, tmp_path):
        path = tmp_path / "model.npz"
        write_array_file(path, KIND_MODEL, "", ACTOR_DIMS, [np.zeros(3)])
        with pytest.raises(ValueError):
            load_agent(path)

    def test_wrong_array_count_rejected(self, tmp_path):
        from pushkit.model import KIND_AGENT
        path = tmp_path / "agent.npz"
        write_array_file(path, KIND_AGENT, "", ACTOR_DIMS, [np.zeros(3)] * 4)
        with pytest.raises(ValueError):
            load_agent(path)
