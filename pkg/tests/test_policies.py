import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retailsim.core import (BoardConfig, DoNothing, EnvState, Place, Remove,
                            RetailEnvironmentSpec, action_index, apply_action, is_feasible)
from retailsim.features import SalesScaler
from retailsim.model import Hyperparams, sample_prior, with_params
from retailsim.policies import (Batch, DqnConfig, DqnPolicy, QNetwork, ReplayBuffer, TabuPolicy,
                                TabuState, TrainingError, dqn_act, dqn_loss_grad, dqn_train,
                                dqn_train_step, encode_state, epsilon_at, load_qnet,
                                masked_argmax, naive_policy, random_policy, save_qnet, tabu_policy,
                                td_targets, write_training_log)
from retailsim.sim import FIXED_TRUTH, Simulator, SimulatorConfig, rollout


def state_of(grid, day=0, prev=None, epoch=0):
    grid = np.asarray(grid, dtype=np.int8)
    return EnvState(BoardConfig(grid), day, np.zeros(grid.shape) if prev is None else prev, epoch)


states = st.integers(1, 3).flatmap(lambda n: st.integers(1, 3).flatmap(
    lambda k: st.tuples(st.lists(st.integers(0, 1), min_size=n * k, max_size=n * k),
                        st.integers(0, 6)).map(
        lambda t: state_of(np.array(t[0]).reshape(n, k), t[1]))))


class TestSimplePolicies:
    def test_random_uniform_on_single_cell(self):
        rng = np.random.default_rng(0)
        s = state_of([[0]])
        picks = [isinstance(random_policy(s, rng), Place) for _ in range(100_000)]
        assert abs(np.mean(picks) - 0.5) < 0.01

    def test_random_never_places_on_full_board(self):
        rng = np.random.default_rng(1)
        s = state_of(np.ones((2, 2)))
        assert not any(isinstance(random_policy(s, rng), Place) for _ in range(1000))

    def test_random_seeded(self):
        s = state_of([[0, 1], [1, 0]])
        a = [random_policy(s, np.random.default_rng(5)) for _ in range(3)]
        b = [random_policy(s, np.random.default_rng(5)) for _ in range(3)]
        assert a == b

    @settings(max_examples=100)
    @given(states, st.integers(0, 2**32 - 1))
    def test_all_policies_feasible(self, s, seed):
        assert is_feasible(s.board, random_policy(s, np.random.default_rng(seed)))
        assert naive_policy(s) == DoNothing()
        net = QNetwork(*s.board.shape, hidden=(8,), rng=np.random.default_rng(seed))
        assert is_feasible(s.board, dqn_act(net, s))
        tabu = TabuState()
        ev = lambda st_, a: float(np.random.default_rng(action_index(a, *s.board.shape)).normal())
        assert is_feasible(s.board, tabu_policy(s, tabu, ev))


class TestTabu:
    def evaluator(self, scores):
        return lambda state, a: scores.get(a, 0.0)

    def test_argmax(self):
        s = state_of([[0, 0]])
        ev = self.evaluator({Place(0, 0): 5.0, Place(0, 1): 3.0})
        assert tabu_policy(s, TabuState(), ev) == Place(0, 0)

    def test_best_on_list_gives_second(self):
        s = state_of([[0, 0]])
        tabu = TabuState()
        tabu.push(Place(0, 0))
        ev = self.evaluator({Place(0, 0): 5.0, Place(0, 1): 3.0})
        assert tabu_policy(s, tabu, ev) == Place(0, 1)
        assert list(tabu.tabu_list)[-1] == Place(0, 1)

    def test_do_nothing_admissible_when_tabu(self):
        s = state_of([[0]])
        tabu = TabuState()
        tabu.push(DoNothing())
        assert tabu_policy(s, tabu, self.evaluator({DoNothing(): 1.0, Place(0, 0): -1.0})) == DoNothing()

    def test_ties_lowest_index(self):
        s = state_of([[0, 0]])
        assert tabu_policy(s, TabuState(), lambda st_, a: 0.0) == DoNothing()

    def test_fifo_capacity_fifty(self):
        tabu = TabuState()
        first = Place(0, 0)
        tabu.push(first)
        for i in range(49):
            tabu.push(Remove(1, i))
        assert first in tabu and len(tabu) == 50
        tabu.push(Remove(2, 0))
        assert first not in tabu and len(tabu) == 50
        assert tabu_policy(state_of([[0]]), tabu, self.evaluator({first: 9.0})) == first

    def test_admissible_again_after_51_steps(self):
        # first step picks Place(0, 0); later steps keep the list busy with DoNothing
        s = state_of([[0]])
        tabu = TabuState()
        assert tabu_policy(s, tabu, self.evaluator({Place(0, 0): 1.0})) == Place(0, 0)
        picks = [tabu_policy(s, tabu, self.evaluator({Place(0, 0): 1.0})) for _ in range(51)]
        assert all(p == DoNothing() for p in picks[:50]) and picks[50] == Place(0, 0)
        assert len(tabu) == 50

    def test_expected_reward_evaluator_greedy(self):
        env = RetailEnvironmentSpec(1, 2, np.array([10.0, 1.0]), placement_cost=1.0)
        p = with_params(sample_prior(Hyperparams(1, 2), np.random.default_rng(0)),
                        w_t=np.zeros(7), w_r=np.zeros(1), w_p=np.array([5.0, 5.0]),
                        w_s=0.0, b=0.0, sigma_q=1.0)
        sim = Simulator(env, p, SalesScaler(0.0, 1.0), SimulatorConfig(param_mode=FIXED_TRUTH))
        pol = TabuPolicy(sim)
        assert pol(sim.reset(BoardConfig(np.zeros((1, 2), dtype=np.int8)))) == Place(0, 0)
        pol.reset()
        assert len(pol.tabu) == 0


class TestEncoding:
    def test_layout(self):
        cfg = DqnConfig()
        x = encode_state(state_of(np.zeros((2, 3)), day=4), cfg)
        assert x.shape == (2 * 6 + 7,) and x.sum() == 1 and x[12 + 4] == 1
        prev = np.full((2, 3), 50.0)
        y = encode_state(state_of([[1, 0, 0], [0, 0, 0]], day=4, prev=prev), cfg)
        assert y[:6].sum() == 1 and np.all(y[6:12] == 0.5)

    def test_injective_on_small_board(self):
        cfg = DqnConfig()
        seen = set()
        for cells in range(16):
            grid = np.array([(cells >> b) & 1 for b in range(4)]).reshape(2, 2)
            for day in range(7):
                seen.add(encode_state(state_of(grid, day), cfg).tobytes())
        assert len(seen) == 16 * 7


class TestEpsilon:
    def test_endpoints_and_midpoint(self):
        cfg = DqnConfig()
        assert epsilon_at(0, cfg) == 0.99
        assert epsilon_at(17_500, cfg) == 0.05
        assert epsilon_at(8_750, cfg) == pytest.approx(0.52, abs=1e-12)
        assert epsilon_at(49_999, cfg) == 0.05

    @given(st.integers(0, 60_000), st.integers(0, 60_000))
    def test_monotone_bounded(self, a, b):
        cfg = DqnConfig()
        lo, hi = min(a, b), max(a, b)
        assert 0.05 <= epsilon_at(hi, cfg) <= epsilon_at(lo, cfg) <= 0.99


class TestActing:
    def net_with_output(self, values):
        net = QNetwork(1, 1, hidden=(4,), rng=np.random.default_rng(0))
        net.W[-1][...] = 0.0
        net.b[-1][...] = values
        return net

    def test_hand_set_do_nothing(self):
        net = self.net_with_output([5.0, 1.0, 2.0])
        assert dqn_act(net, state_of([[0]])) == DoNothing()

    def test_infeasible_argmax_masked(self):
        net = self.net_with_output([1.0, 2.0, 9.0])    # Remove best but board empty
        assert dqn_act(net, state_of([[0]])) == Place(0, 0)
        assert DqnPolicy(net)(state_of([[1]])) == Remove(0, 0)

    def test_masked_argmax_ties(self):
        assert masked_argmax(np.array([1.0, 3.0, 3.0]), np.array([True, True, True])) == 1
        assert masked_argmax(np.array([1.0, 3.0, 3.0]), np.array([True, False, True])) == 2

    def test_sizes(self):
        net = QNetwork(6, 5)
        assert net.sizes == [67, 128, 64, 61] and net.n_actions == 61


class TestReplay:
    def test_fifo_eviction_and_membership(self):
        buf = ReplayBuffer(3, 1, 2)
        for i in range(5):
            buf.push([i], i % 2, float(i), [i + 1], False, [True, True])
        assert len(buf) == 3
        b = buf.sample(3, np.random.default_rng(0))
        assert sorted(b.rewards.tolist()) == [2.0, 3.0, 4.0]
        np.testing.assert_array_equal(b.next_obs[:, 0], b.obs[:, 0] + 1)

    def test_without_replacement_and_minimum(self):
        buf = ReplayBuffer(10, 1, 1)
        for i in range(4):
            buf.push([i], 0, float(i), [i], False, [True])
        b = buf.sample(4, np.random.default_rng(1))
        assert len(set(b.rewards.tolist())) == 4
        with pytest.raises(ValueError):
            buf.sample(5, np.random.default_rng(1))


def one_batch(obs_dim=9, n_actions=3, reward=2.0, done=False):
    return Batch(np.ones((1, obs_dim)), np.array([1]), np.array([reward]),
                 np.zeros((1, obs_dim)), np.array([done]), np.ones((1, n_actions), dtype=bool))


class TestTrainStep:
    def test_myopic_target(self):
        net = QNetwork(1, 1, hidden=(4,), rng=np.random.default_rng(0))
        cfg = DqnConfig(discount=0.0, reward_scale=1.0)
        np.testing.assert_array_equal(td_targets(net, one_batch(reward=2.5), cfg), [2.5])

    def test_target_masks_infeasible_and_terminal(self):
        net = QNetwork(1, 1, hidden=(4,), rng=np.random.default_rng(0))
        net.W[-1][...] = 0
        net.b[-1][...] = [1.0, 2.0, 7.0]
        cfg = DqnConfig(discount=0.5, reward_scale=1.0)
        b = one_batch(reward=1.0)
        b.next_masks[...] = [True, True, False]
        assert td_targets(net, b, cfg)[0] == pytest.approx(1.0 + 0.5 * 2.0)
        b.dones[...] = True
        assert td_targets(net, b, cfg)[0] == 1.0

    def test_zero_loss_leaves_weights(self):
        net = QNetwork(1, 1, hidden=(4,), rng=np.random.default_rng(0))
        cfg = DqnConfig(discount=0.0, reward_scale=1.0)
        b = one_batch()
        b.rewards[:] = net(b.obs)[0, 1]
        before = net.get_flat()
        assert dqn_train_step(net, net.copy(), b, cfg) == 0.0
        np.testing.assert_array_equal(net.get_flat(), before)

    def test_loss_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        net = QNetwork(2, 2, hidden=(6, 5), rng=rng)
        for b in net.b:
            b[...] = rng.normal(0, 0.1, b.shape)
        target = QNetwork(2, 2, hidden=(6, 5), rng=rng)
        n = 5
        batch = Batch(rng.normal(size=(n, 15)), rng.integers(9, size=n), rng.normal(size=n),
                      rng.normal(size=(n, 15)), rng.random(n) < 0.3, rng.random((n, 9)) < 0.7)
        cfg = DqnConfig(discount=0.2, reward_scale=1.0)
        _, grads = dqn_loss_grad(net, target, batch, cfg)
        g = np.concatenate([x.ravel() for x in grads])
        flat = net.get_flat()
        fd = np.empty_like(flat)
        h = 1e-6
        for i in range(flat.size):
            vals = []
            for sgn in (1, -1):
                f = flat.copy()
                f[i] += sgn * h
                net.set_flat(f)
                vals.append(dqn_loss_grad(net, target, batch, cfg)[0])
            fd[i] = (vals[0] - vals[1]) / (2 * h)
        net.set_flat(flat)
        assert np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3)) < 1e-4

    def test_single_transition_overfit(self):
        net = QNetwork(1, 1, hidden=(16,), rng=np.random.default_rng(3))
        target = net.copy()
        cfg = DqnConfig(discount=0.2, reward_scale=1.0)
        b = one_batch(reward=1.5, done=True)
        for step in range(5000):
            loss = dqn_train_step(net, target, b, cfg)
            if loss < 1e-4:
                break
        assert loss < 1e-4

    def test_non_finite_aborts(self):
        net = QNetwork(1, 1, hidden=(4,), rng=np.random.default_rng(0))
        with pytest.raises(TrainingError):
            dqn_train_step(net, net.copy(), one_batch(reward=np.inf), DqnConfig())
        with pytest.raises(ValueError):
            dqn_train_step(net, net.copy(), Batch(*(a[:0] for a in vars(one_batch()).values())),
                           DqnConfig())


ENV1 = RetailEnvironmentSpec(1, 1, np.array([10.0]), placement_cost=1.0)


def toy_factory(horizon=10):
    p = with_params(sample_prior(Hyperparams(1, 1), np.random.default_rng(0)),
                    w_t=np.zeros(7), w_r=np.zeros(1), w_p=np.array([5.0]), w_s=0.0, b=0.0,
                    sigma_q=1.0)
    cfg = SimulatorConfig(horizon_days=horizon, param_mode=FIXED_TRUTH)

    def factory(episode):
        sim = Simulator(ENV1, p, SalesScaler(0.0, 1.0), cfg, seed=episode)
        rng = np.random.default_rng(episode)
        return sim, sim.reset(BoardConfig(np.array([[rng.integers(2)]], dtype=np.int8)),
                              int(rng.integers(7)))
    return factory


TOY_CFG = DqnConfig(training_iterations=3000, learning_starts=200, hidden=(16,),
                    target_sync_interval=100, buffer_capacity=3000, log_interval=1000,
                    learning_rate=1e-3)


class TestDqnTrain:
    def test_toy_environment_places(self):
        net, log = dqn_train(toy_factory(), TOY_CFG, seed=0)
        assert len(log) == 3 and [e.iteration for e in log] == [1000, 2000, 3000]
        for day in range(7):
            for prev in (0.0, 50.0):
                assert dqn_act(net, state_of([[0]], day, np.array([[prev]])), TOY_CFG) == Place(0, 0)
                assert dqn_act(net, state_of([[1]], day, np.array([[prev]])), TOY_CFG) == DoNothing()

    def test_seeds_differ_and_beat_random(self):
        factory = toy_factory(30)
        sim, s0 = factory(999)
        s0 = sim.reset(BoardConfig(np.zeros((1, 1), dtype=np.int8)), 0)
        rng = np.random.default_rng(0)
        rand_total = rollout(lambda s: random_policy(s, rng), sim, s0).total_reward
        nets = [dqn_train(factory, TOY_CFG, seed=s)[0] for s in (1, 2)]
        assert not np.array_equal(nets[0].get_flat(), nets[1].get_flat())
        for net in nets:
            assert rollout(DqnPolicy(net, TOY_CFG), sim, s0).total_reward > rand_total

    def test_deterministic_and_log_count(self):
        cfg = DqnConfig(training_iterations=2000, learning_starts=500, hidden=(8,),
                        log_interval=1000)
        a, la = dqn_train(toy_factory(), cfg, seed=4)
        b, lb = dqn_train(toy_factory(), cfg, seed=4)
        assert a.get_flat().tobytes() == b.get_flat().tobytes()
        assert [e.mean_reward for e in la] == [e.mean_reward for e in lb] and len(la) == 2


class TestPersistence:
    def test_round_trip(self, tmp_path):
        cfg = DqnConfig(hidden=(8, 4))
        net = QNetwork(2, 3, cfg.hidden, np.random.default_rng(0))
        save_qnet(tmp_path / "q.bin", net, cfg, {"seed": 5})
        back, cfg2, meta = load_qnet(tmp_path / "q.bin")
        assert back.get_flat().tobytes() == net.get_flat().tobytes()
        assert cfg2.digest() == cfg.digest() and meta["seed"] == 5

    def test_hash_mismatch(self, tmp_path):
        import json
        import struct
        cfg = DqnConfig(hidden=(4,))
        save_qnet(tmp_path / "q.bin", QNetwork(1, 1, (4,)), cfg)
        raw = (tmp_path / "q.bin").read_bytes()
        size = struct.unpack("<Q", raw[8:16])[0]
        meta = json.loads(raw[16:16 + size])
        meta["config"]["discount"] = 0.9
        blob = json.dumps(meta, sort_keys=True).encode()
        (tmp_path / "bad.bin").write_bytes(raw[:8] + struct.pack("<Q", len(blob)) + blob + raw[16 + size:])
        with pytest.raises(ValueError, match="hash"):
            load_qnet(tmp_path / "bad.bin")

    def test_training_log_csv(self, tmp_path):
        _, log = dqn_train(toy_factory(), DqnConfig(training_iterations=1000, learning_starts=100,
                                                    hidden=(4,)), seed=0)
        write_training_log(tmp_path / "log.csv", log)
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "iteration,epsilon,mean_reward,loss" and len(lines) == 2
