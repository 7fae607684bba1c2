import numpy as np
import pytest

from cnuav.agent import (ActionSpace, AgentConfig, action_error, init_policy,
                         run_episode, select_actions, update_policy)
from cnuav.harness import ExperimentConfig, build_environment, train_model
from cnuav.noma import check_constraints


def tiny_cfg(**overrides):
    base = dict(num_sus=6, num_subchannels=4, pu_channels=[1],
                episodes=2, episode_length=6, samples_per_slot=2,
                particles=24, train_episodes=3, gng_max_nodes=12,
                num_multiplexed=3, seeds=[1])
    base.update(overrides)
    return ExperimentConfig(**base)


def make_env_and_model(cfg, m, seed=1):
    rng = np.random.default_rng(seed)
    env = build_environment(cfg, m, rng)
    model = train_model(cfg, env, np.random.default_rng(seed + 1))
    env.new_episode(np.random.default_rng(seed + 2))
    return env, model


class TestInitPolicy:
    def test_uniform_rows_k6(self):
        tables = init_policy(6, 20, a0_power=10.0)
        assert np.allclose(tables.rows(), 1.0 / 6.0)

    def test_k1_probability_one(self):
        tables = init_policy(1, 3, a0_power=10.0)
        assert np.allclose(tables.rows(), 1.0)

    def test_initial_power_equals_a0(self):
        tables = init_policy(4, 5, a0_power=7.5)
        assert np.allclose(tables.power_state, 7.5)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            init_policy(0, 3, 10.0)


class TestActionSpace:
    def test_valid(self):
        ActionSpace(num_subchannels=6, power_min=0.0, power_max=20.0)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            ActionSpace(num_subchannels=6, power_min=5.0, power_max=1.0)


class TestSelectActions:
    def test_pu_channels_never_selected(self):
        cfg = tiny_cfg(num_subchannels=6, pu_channels=[1, 2, 3], num_sus=12)
        env, model = make_env_and_model(cfg, 5)
        tables = init_policy(6, 12, 10.0,
                             model.vocabulary("combined").num_clusters)
        rng = np.random.default_rng(3)
        forecast = env.pu_model.forecast_occupied()
        for _ in range(50):
            alloc, _, admissible, _, _ = select_actions(
                tables, forecast, np.zeros(6, dtype=int), env, rng)
            for c in (0, 1, 2):
                assert not alloc.membership[c]
            assert not admissible[[0, 1, 2]].any()

    def test_pigeonhole_under_cap(self):
        cfg = tiny_cfg(num_sus=20, num_subchannels=6, pu_channels=[1, 2, 3])
        env, model = make_env_and_model(cfg, 5)
        tables = init_policy(6, 20, 10.0,
                             model.vocabulary("combined").num_clusters)
        rng = np.random.default_rng(4)
        alloc, _, _, _, _ = select_actions(tables, env.pu_model.forecast_occupied(),
                                        np.zeros(6, dtype=int), env, rng)
        active = sum(len(m) for m in alloc.membership)
        assert active == 15  # 3 free channels x M=5; the rest idle
        for members in alloc.membership:
            assert len(members) <= 5

    def test_uniform_sampling_frequencies(self):
        cfg = tiny_cfg(num_sus=1, num_subchannels=4, pu_channels=[])
        env, model = make_env_and_model(cfg, 1)
        tables = init_policy(4, 1, 10.0,
                             model.vocabulary("combined").num_clusters)
        rng = np.random.default_rng(5)
        counts = np.zeros(4)
        draws = 10000
        for _ in range(draws):
            alloc, _, _, _, _ = select_actions(
                tables, env.pu_model.forecast_occupied(),
                np.zeros(4, dtype=int), env, rng)
            for c, members in enumerate(alloc.membership):
                counts[c] += len(members)
        assert np.max(np.abs(counts / draws - 0.25)) < 0.02

    def test_emitted_allocations_feasible(self):
        cfg = tiny_cfg(num_sus=10, num_subchannels=5, pu_channels=[1])
        env, model = make_env_and_model(cfg, 3)
        tables = init_policy(5, 10, 10.0,
                             model.vocabulary("combined").num_clusters)
        rng = np.random.default_rng(6)
        for _ in range(40):
            alloc, _, _, _, _ = select_actions(
                tables, env.pu_model.forecast_occupied(),
                np.zeros(5, dtype=int), env, rng)
            ok, violations = check_constraints(alloc, 3, cfg.p_max_w,
                                               per_channel_caps=cfg.per_channel_cap_w)
            assert ok, violations

    def test_no_admissible_channel_idles_everyone(self):
        cfg = tiny_cfg(num_subchannels=2, pu_channels=[1, 2])
        env = build_environment(cfg, 2, np.random.default_rng(1))
        env.new_episode(np.random.default_rng(2))
        tables = init_policy(2, cfg.num_sus, 10.0)
        alloc, _, admissible, _, _ = select_actions(
            tables, env.pu_model.forecast_occupied(), np.zeros(2, dtype=int),
            env, np.random.default_rng(0))
        assert not admissible.any()
        assert all(not m for m in alloc.membership)


class TestActionError:
    def test_matching_messages_zero(self):
        row = np.array([0.25, 0.25, 0.25, 0.25])
        _, err = action_error(row, row)
        assert np.allclose(err, 0.0)

    def test_concentrated_diagnostic(self):
        pi = np.full(6, 1.0 / 6.0)
        lam = np.zeros(6)
        lam[3] = 1.0
        _, err = action_error(pi, lam)
        assert err[3] == pytest.approx(1.0 - 1.0 / 6.0)
        assert np.allclose(np.delete(err, 3), -1.0 / 6.0)

    def test_error_sums_to_zero(self):
        rng = np.random.default_rng(1)
        pi = rng.dirichlet(np.ones(5))
        lam = rng.dirichlet(np.ones(5))
        _, err = action_error(pi, lam)
        assert err.sum() == pytest.approx(0.0, abs=1e-12)

    def test_mismatched_support_rejected(self):
        with pytest.raises(ValueError):
            action_error(np.ones(3) / 3, np.ones(4) / 4)


class TestUpdatePolicy:
    def test_zero_error_unchanged(self):
        tables = init_policy(4, 2, 10.0)
        before = tables.rows().copy()
        update_policy(tables, np.zeros((2, 4)), 0.1)
        assert np.allclose(tables.rows(), before)

    def test_repeated_error_concentrates(self):
        tables = init_policy(6, 1, 10.0)
        err = np.full((1, 6), -1.0 / 6.0)
        err[0, 3] = 1.0 - 1.0 / 6.0
        last = 0.0
        for _ in range(200):
            update_policy(tables, err, 0.1)
            assert tables.rows()[0, 3] >= last - 1e-12
            last = tables.rows()[0, 3]
        assert tables.rows()[0, 3] > 0.99

    def test_rows_remain_distributions(self):
        rng = np.random.default_rng(2)
        tables = init_policy(5, 3, 10.0)
        for _ in range(100):
            err = rng.normal(0, 0.5, size=(3, 5))
            update_policy(tables, err, 0.2)
            rows = tables.rows()
            assert np.all(rows >= 0)
            assert np.allclose(rows.sum(axis=1), 1.0, atol=1e-9)

    def test_power_offsets_clipped(self):
        tables = init_policy(4, 2, 10.0, num_clusters=3)
        update_policy(tables, np.zeros((2, 4)), 0.1,
                      power_errors=[(1, 1e9)], power_step=1.0)
        assert abs(tables.offsets()[1]) <= 10.0

    def test_rejects_bad_step(self):
        tables = init_policy(4, 2, 10.0)
        with pytest.raises(ValueError):
            update_policy(tables, np.zeros((2, 4)), 0.0)


class TestRunEpisode:
    def test_deterministic_trace(self):
        cfg = tiny_cfg()
        outs = []
        for _ in range(2):
            env, model = make_env_and_model(cfg, 3)
            tables = init_policy(cfg.num_subchannels, cfg.num_sus, 10.0,
                                 model.vocabulary("combined").num_clusters)
            trace, _, _ = run_episode(env, model, tables,
                                      AgentConfig(particles=cfg.particles,
                                                  samples_per_slot=2),
                                      np.random.default_rng(7))
            outs.append(trace)
        assert np.array_equal(outs[0].sum_rate, outs[1].sum_rate)
        assert np.array_equal(outs[0].abnormality, outs[1].abnormality)
        assert np.array_equal(outs[0].assignments, outs[1].assignments)

    def test_trace_lengths_match_episode(self):
        cfg = tiny_cfg(episode_length=9)
        env, model = make_env_and_model(cfg, 3)
        tables = init_policy(cfg.num_subchannels, cfg.num_sus, 10.0,
                             model.vocabulary("combined").num_clusters)
        trace, _, _ = run_episode(env, model, tables,
                                  AgentConfig(particles=cfg.particles,
                                              samples_per_slot=2),
                                  np.random.default_rng(8))
        assert trace.sum_rate.shape == (9,)
        assert trace.assignments.shape == (9, cfg.num_sus)

    def test_pu_channels_unused_throughout(self):
        cfg = tiny_cfg(num_subchannels=4, pu_channels=[2])
        env, model = make_env_and_model(cfg, 3)
        tables = init_policy(4, cfg.num_sus, 10.0,
                             model.vocabulary("combined").num_clusters)
        trace, _, _ = run_episode(env, model, tables,
                                  AgentConfig(particles=cfg.particles,
                                              samples_per_slot=2),
                                  np.random.default_rng(9))
        assert not np.any(trace.assignments == 1)  # 0-based PU channel
