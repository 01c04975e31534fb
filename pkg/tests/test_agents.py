## Tests for agent state, the QQL / XQL / BC update steps and action selection

import json
from dataclasses import replace

import numpy as np
import pytest
from pydantic import ValidationError

from qql import agents, data, nnet
from qql.agents import AblationFlags, TrainConfig
from qql.errors import NonFiniteGradientError, TrainingDivergenceError
from qql.gumbel import quantile_levels
from qql.losses import quantile_loss


def _batch(dataset, size=32, seed=0):
    return data.sample_batch_arrays(dataset, size, np.random.default_rng(seed))


def _min_target_q(state, batch):
    x = np.hstack([batch.s, state.head.encode(batch.a)])
    spec = state.specs['q']
    return np.minimum(nnet.forward(spec, state.params['q1_target'], x)[:, 0],
                      nnet.forward(spec, state.params['q2_target'], x)[:, 0])


## Training configuration model
class TestTrainConfig:

    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.lam == 1.0 and cfg.zeta == 1.0 and cfg.beta_low == 0.1
        assert cfg.gamma == 0.99 and cfg.tau == 0.005 and cfg.batch_size == 256
        assert cfg.beta == 2.0 and cfg.hidden_dims == [256, 256]

    def test_lambda_alias(self):
        cfg = TrainConfig(**{'lambda': 0.5})
        assert cfg.lam == 0.5
        assert cfg.model_dump(by_alias=True)['lambda'] == 0.5

    @pytest.mark.parametrize("field, value", [
        ("gamma", 1.0), ("tau", 1.5), ("lr_q", 0.0), ("zeta", -1.0), ("beta_low", 0.0),
        ("batch_size", 0), ("steps", -1), ("hidden_dims", []), ("lam", -0.1),
    ])
    def test_rejects_invalid(self, field, value):
        with pytest.raises(ValidationError):
            TrainConfig(**{field: value})


## Fresh agents and serialisation
class TestAgentState:

    def test_discrete_agent_layout(self, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 0)
        assert state.discrete and state.action_size == 4
        assert state.specs['q'].input_dim == 25 + 4
        assert state.specs['pi'].output_dim == 4
        assert 'log_std' not in state.params
        np.testing.assert_array_equal(state.params['q1_target'], state.params['q1'])

    def test_continuous_agent_has_log_std(self, point_env, small_config):
        state = agents.init_agent_state(point_env, small_config, 0)
        assert not state.discrete
        np.testing.assert_array_equal(state.log_std, np.zeros(2))
        assert set(state.optimizers) == {'q1', 'q2', 'v1', 'v2', 'pi', 'log_std'}

    def test_networks_are_initialised_independently(self, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 0)
        assert not np.array_equal(state.params['q1'], state.params['q2'])
        assert not np.array_equal(state.params['v1'], state.params['v2'])

    def test_json_round_trip(self, point_env, small_config):
        state = agents.init_agent_state(point_env, small_config, 3)
        restored = agents.state_from_dict(json.loads(json.dumps(agents.state_to_dict(state))))
        assert restored.specs == state.specs and restored.step == state.step
        for name in state.params:
            np.testing.assert_array_equal(restored.params[name], state.params[name])
        assert restored.optimizers['pi'].lr == state.optimizers['pi'].lr

    def test_act(self, grid_env, point_env, small_config):
        grid_state = agents.init_agent_state(grid_env, small_config, 0)
        action = agents.act(grid_state, np.eye(25)[3])
        assert isinstance(action, int) and 0 <= action < 4
        point_state = agents.init_agent_state(point_env, small_config, 0)
        action = agents.act(point_state, np.array([0.1, -0.4]), deterministic=False, rng=np.random.default_rng(0))
        assert action.shape == (2,) and np.all(np.abs(action) <= 1.0)


## One QQL update
class TestQqlUpdate:

    @pytest.mark.smoke
    def test_zero_reward_zero_init_step(self, grid_dataset, grid_env, small_config, asserter):
        zero_reward = replace(grid_dataset, transitions=tuple(replace(t, r=0.0) for t in grid_dataset.transitions))
        state = agents.init_agent_state(grid_env, small_config, 0, zero=True)
        new_state, metrics = agents.qql_update(state, _batch(zero_reward), small_config, AblationFlags(),
                                               np.random.default_rng(0))
        asserter.assert_all_finite(list(metrics.as_row().values()), "metrics")
        assert metrics.beta_mean == pytest.approx(small_config.beta_low)
        assert new_state.step == 1

    def test_plain_quantile_losses_without_flags(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 1)
        batch = _batch(grid_dataset)
        flags = AblationFlags(value_regularization=False, conservative_estimation=False)
        _, metrics = agents.qql_update(state, batch, small_config, flags, np.random.default_rng(0))

        levels = quantile_levels()
        q = _min_target_q(state, batch)
        v1 = nnet.forward(state.specs['v'], state.params['v1'], batch.s)[:, 0]
        v2 = nnet.forward(state.specs['v'], state.params['v2'], batch.s)[:, 0]
        assert metrics.loss_v1 == pytest.approx(float(np.mean(quantile_loss(q - v1, levels.alpha1))), abs=1e-12)
        assert metrics.loss_v2 == pytest.approx(float(np.mean(quantile_loss(q - v2, levels.alpha2))), abs=1e-12)

    def test_ablation_flags_reach_the_losses(self, mocker, grid_dataset, grid_env, small_config):
        spy = mocker.spy(agents, 'qql_value_losses')
        state = agents.init_agent_state(grid_env, small_config, 1)
        flags = AblationFlags(value_regularization=False, conservative_estimation=False)
        agents.qql_update(state, _batch(grid_dataset), small_config, flags, np.random.default_rng(0))
        args = spy.call_args.args
        assert args[4] == 0.0
        assert args[6] is False

    def test_policy_weights_use_updated_values(self, mocker, grid_dataset, grid_env, small_config):
        spy = mocker.spy(agents, 'qql_awr_weight')
        state = agents.init_agent_state(grid_env, small_config, 2)
        batch = _batch(grid_dataset)
        new_state, _ = agents.qql_update(state, batch, small_config, AblationFlags(), np.random.default_rng(0))
        q_arg, readout, _ = spy.call_args.args
        np.testing.assert_array_equal(q_arg, _min_target_q(state, batch))
        expected_v1 = nnet.forward(new_state.specs['v'], new_state.params['v1'], batch.s)[:, 0]
        np.testing.assert_array_equal(readout.v1, expected_v1)

    def test_targets_track_online_nets(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 3)
        new_state, _ = agents.qql_update(state, _batch(grid_dataset), small_config, AblationFlags(),
                                         np.random.default_rng(0))
        tau = small_config.tau
        for name in ('q1', 'q2'):
            expected = (1.0 - tau) * state.params[f'{name}_target'] + tau * new_state.params[name]
            np.testing.assert_allclose(new_state.params[f'{name}_target'], expected, rtol=1e-12, atol=1e-15)

    def test_update_does_not_mutate_input_state(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 4)
        before = {name: values.copy() for name, values in state.params.items()}
        agents.qql_update(state, _batch(grid_dataset), small_config, AblationFlags(), np.random.default_rng(0))
        for name, values in before.items():
            np.testing.assert_array_equal(state.params[name], values)
        assert state.step == 0

    def test_deterministic(self, point_dataset, point_env, small_config):
        batch = _batch(point_dataset)
        runs = []
        for _ in range(2):
            state = agents.init_agent_state(point_env, small_config, 5)
            for _ in range(3):
                state, metrics = agents.qql_update(state, batch, small_config, AblationFlags(),
                                                   np.random.default_rng(9))
            runs.append((state, metrics))
        assert runs[0][1] == runs[1][1]
        np.testing.assert_array_equal(runs[0][0].params['log_std'], runs[1][0].params['log_std'])

    def test_continuous_update_moves_log_std(self, point_dataset, point_env, small_config):
        state = agents.init_agent_state(point_env, small_config, 6)
        new_state, metrics = agents.qql_update(state, _batch(point_dataset), small_config, AblationFlags(),
                                               np.random.default_rng(0))
        assert not np.array_equal(new_state.log_std, state.log_std)
        assert metrics.grad_norm_pi > 0.0

    def test_non_finite_reward_aborts(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 7)
        batch = _batch(grid_dataset)
        broken = replace(batch, r=np.full_like(batch.r, np.nan))
        with pytest.raises((NonFiniteGradientError, TrainingDivergenceError)):
            agents.qql_update(state, broken, small_config, AblationFlags(), np.random.default_rng(0))


## Baselines
class TestBaselines:

    def test_xql_equal_values_give_zero_loss_and_unit_weights(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 0, zero=True)
        _, metrics = agents.xql_update(state, _batch(grid_dataset), small_config, 2.0, np.random.default_rng(0))
        assert metrics.loss_v1 == 0.0
        assert metrics.weight_mean == 1.0
        assert metrics.beta_mean == 2.0

    def test_xql_uses_given_temperature(self, mocker, grid_dataset, grid_env, small_config):
        spy = mocker.spy(agents, 'xql_value_loss')
        state = agents.init_agent_state(grid_env, small_config, 1)
        agents.xql_update(state, _batch(grid_dataset), small_config, 10.0, np.random.default_rng(0))
        assert spy.call_args.args[2] == 10.0

    def test_bc_only_touches_the_policy(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 2)
        new_state, metrics = agents.bc_update(state, _batch(grid_dataset), small_config)
        for name in ('q1', 'q2', 'v1', 'v2', 'q1_target', 'q2_target'):
            np.testing.assert_array_equal(new_state.params[name], state.params[name])
        assert not np.array_equal(new_state.params['pi'], state.params['pi'])
        assert metrics.weight_mean == 1.0

    @pytest.mark.slow
    @pytest.mark.integration
    def test_bc_recovers_deterministic_behavior(self, grid_env):
        dataset = data.generate(grid_env, 'epsilon-optimal(0)', 3000, seed=5)
        cfg = TrainConfig(hidden_dims=[64, 64], batch_size=64, seed=5, lr_pi=1e-3)
        state = agents.init_agent_state(grid_env, cfg, cfg.seed)
        gen = np.random.default_rng(5)
        for _ in range(10 ** 4):
            state, _ = agents.bc_update(state, data.sample_batch_arrays(dataset, cfg.batch_size, gen), cfg)
        arrays = dataset.arrays
        predicted = np.array([agents.act(state, obs) for obs in arrays.s])
        assert float(np.mean(predicted == arrays.a)) >= 0.99

    def test_learned_q_mean_is_finite(self, grid_dataset, grid_env, small_config):
        state = agents.init_agent_state(grid_env, small_config, 3)
        assert np.isfinite(agents.learned_q_mean(state, grid_dataset.arrays))


## Long-horizon behaviour of QQL on the toy datasets
@pytest.mark.slow
class TestLongRuns:

    def _train(self, env, dataset, cfg, steps, checkpoints=10):
        state = agents.init_agent_state(env, cfg, cfg.seed)
        gen = np.random.default_rng(cfg.seed)
        trace = []
        for step in range(1, steps + 1):
            state, _ = agents.qql_update(state, data.sample_batch_arrays(dataset, cfg.batch_size, gen), cfg,
                                         AblationFlags(), gen)
            if step % (steps // checkpoints) == 0:
                trace.append(agents.learned_q_mean(state, dataset.arrays))
        return state, trace

    @pytest.mark.parametrize("env_name, dataset_name", [
        ("grid_env", "grid_dataset"),
        ("point_env", "point_dataset"),
        ("bandit_env", "bandit_dataset"),
    ])
    def test_hundred_thousand_steps_stay_finite_and_bounded(self, request, asserter, env_name, dataset_name):
        env, dataset = request.getfixturevalue(env_name), request.getfixturevalue(dataset_name)
        cfg = TrainConfig(hidden_dims=[32, 32], batch_size=64, seed=0)
        state, trace = self._train(env, dataset, cfg, 10 ** 5)
        assert state.step == 10 ** 5
        for name, values in state.params.items():
            asserter.assert_all_finite(values, name)
        # no learned Q may leave the range reachable by discounted rewards
        bound = float(np.max(np.abs(dataset.arrays.r))) / (1.0 - cfg.gamma)
        assert all(abs(q) <= bound for q in trace)

    def test_upper_value_sits_above_lower_value(self, grid_env):
        dataset = data.generate(grid_env, 'uniform-random', 5000, seed=4)
        cfg = TrainConfig(hidden_dims=[32, 32], batch_size=64, seed=4)
        state, _ = self._train(grid_env, dataset, cfg, 5000)
        s = dataset.arrays.s
        v_low = nnet.forward(state.specs['v'], state.params['v1'], s)[:, 0]
        v_high = nnet.forward(state.specs['v'], state.params['v2'], s)[:, 0]
        assert float(np.mean(v_high - v_low)) > 0.0
