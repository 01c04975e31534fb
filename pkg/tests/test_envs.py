## Tests for the toy environments and their tabular oracles

import math

import numpy as np
import pytest

from qql import envs
from qql.errors import DomainError, ShapeError, UnsupportedError
from qql.evalkit import evaluate, oracle_policy
from qql.gumbel import OMEGA, GumbelParams, gumbel_sample


## Gridworld dynamics and observation
class TestGrid5:

    def test_reaching_goal_is_terminal_with_reward(self, grid_env, rng):
        # cell 23 sits left of the goal
        state, reward, terminal = grid_env.step(envs.GridState(cell=23), 1, rng)
        assert state.cell == 24 and reward == 1.0 and terminal

    def test_walls_keep_the_agent_in_place(self, grid_env, rng):
        state, reward, terminal = grid_env.step(envs.GridState(cell=0), 0, rng)
        assert state.cell == 0 and reward == 0.0 and not terminal

    def test_horizon_ends_the_episode(self, grid_env, rng):
        _, _, terminal = grid_env.step(envs.GridState(cell=0, t=grid_env.horizon - 1), 3, rng)
        assert terminal

    def test_reset_never_starts_at_goal(self, grid_env):
        gen = np.random.default_rng(0)
        cells = {grid_env.reset(gen).cell for _ in range(2000)}
        assert grid_env.goal not in cells
        assert len(cells) == 24

    def test_observation_is_one_hot(self, grid_env):
        obs = envs.observe(grid_env, envs.GridState(cell=7))
        assert obs.shape == (25,) and obs[7] == 1.0 and obs.sum() == 1.0

    @pytest.mark.parametrize("action", [4, -1, [0, 1]])
    def test_malformed_action(self, grid_env, rng, action):
        with pytest.raises(ShapeError):
            grid_env.step(envs.GridState(cell=0), action, rng)

    def test_shortest_distances(self, grid_env):
        d = envs.shortest_distances(grid_env)
        assert d[24] == 0 and d[0] == 8 and d[23] == 1
        rows, cols = np.divmod(np.arange(25), 5)
        np.testing.assert_array_equal(d, (4 - rows) + (4 - cols))


## Point mass dynamics
class TestPointMass:

    def test_at_goal_with_zero_action(self, point_env, rng):
        _, reward, _ = point_env.step(envs.PointState(position=(0.5, 0.5)), np.zeros(2), rng)
        assert reward == 0.0

    def test_positions_are_clipped(self, point_env, rng):
        state, _, _ = point_env.step(envs.PointState(position=(0.95, -0.95)), np.array([1.0, -1.0]), rng)
        assert state.position == (1.0, -1.0)

    def test_actions_are_clipped(self, point_env, rng):
        state, _, _ = point_env.step(envs.PointState(position=(0.0, 0.0)), np.array([5.0, 0.0]), rng)
        assert state.position[0] == pytest.approx(0.2)

    def test_wrong_action_dimension(self, point_env, rng):
        with pytest.raises(ShapeError):
            point_env.step(envs.PointState(position=(0.0, 0.0)), np.zeros(3), rng)

    def test_oracle_closes_in(self, point_env):
        mean, _, _ = evaluate(point_env, oracle_policy(point_env), 5, np.random.default_rng(1))
        # after at most 8 steps the oracle sits on the goal, so the return is bounded
        assert mean > -8.0 * 2.0 * math.sqrt(2.0)


## Single-step bandit over a fixed network
class TestBandit:

    def test_single_step(self, bandit_env, rng):
        state = bandit_env.reset(rng)
        _, reward, terminal = bandit_env.step(state, np.array([0.3]), rng)
        assert terminal
        assert reward == pytest.approx(float(bandit_env.network_output(np.array([0.3]))[0]))

    def test_network_depends_on_seed(self):
        a = envs.make_env('gumbel-bandit', seed=0).network_output(np.linspace(-1, 1, 5))
        b = envs.make_env('gumbel-bandit', seed=1).network_output(np.linspace(-1, 1, 5))
        assert not np.allclose(a, b)

    def test_no_oracle(self, bandit_env):
        with pytest.raises(UnsupportedError):
            envs.oracle_action(bandit_env, envs.BanditState())


## Value iteration and the soft value
class TestTabularOracle:

    def test_zero_discount_gives_immediate_reward(self, grid_env):
        solution = envs.solve_tabular(grid_env, 0.0)
        assert solution.q_star[23, 1] == 1.0
        assert solution.q_star[19, 2] == 1.0
        assert solution.q_star[0].max() == 0.0

    def test_optimal_value_is_discounted_distance(self, grid_env):
        gamma = 0.9
        solution = envs.solve_tabular(grid_env, gamma)
        d = envs.shortest_distances(grid_env)
        for cell in range(24):
            assert solution.v_star[cell] == pytest.approx(gamma ** (d[cell] - 1), abs=1e-9)
        assert solution.v_star[24] == 0.0

    def test_bellman_residual(self, grid_env):
        gamma = 0.95
        solution = envs.solve_tabular(grid_env, gamma)
        for cell in range(24):
            for action in range(4):
                nxt = grid_env.move(cell, action)
                reward = 1.0 if nxt == 24 else 0.0
                backup = reward + (0.0 if nxt == 24 else gamma * solution.v_star[nxt])
                assert solution.q_star[cell, action] == pytest.approx(backup, abs=1e-9)

    def test_warm_start_reaches_same_fixed_point(self, grid_env):
        cold = envs.solve_tabular(grid_env, 0.9)
        warm = envs.solve_tabular(grid_env, 0.9, initial_v=np.full(25, 5.0) * (np.arange(25) != 24))
        np.testing.assert_allclose(warm.v_star, cold.v_star, atol=1e-8)

    def test_oracle_reaches_goal_every_episode(self, grid_env):
        mean, std, returns = evaluate(grid_env, oracle_policy(grid_env), 50, np.random.default_rng(2))
        assert mean == 1.0 and std == 0.0 and len(returns) == 50

    def test_non_finite_env(self, point_env):
        with pytest.raises(UnsupportedError):
            envs.solve_tabular(point_env, 0.9)

    def test_invalid_discount(self, grid_env):
        with pytest.raises(DomainError):
            envs.solve_tabular(grid_env, 1.0)

    def test_with_soft_fills_soft_values(self, grid_env):
        solution = envs.solve_tabular(grid_env, 0.9).with_soft(0.5)
        assert solution.beta == 0.5
        assert np.all(solution.v_soft >= solution.v_star - 1e-12)
        assert solution.v_soft[3] == pytest.approx(envs.soft_value(solution.q_star[3], 0.5))


## Log-sum-exp soft value
class TestSoftValue:

    def test_constant_row(self):
        assert envs.soft_value(np.full(4, 2.0), 0.5) == pytest.approx(2.0 + 0.5 * math.log(4.0), abs=1e-12)

    def test_closed_form(self):
        assert envs.soft_value(np.array([0.0, 1.0]), 1.0) == pytest.approx(math.log(1.0 + math.e), abs=1e-6)

    def test_recovers_hard_max(self):
        assert envs.soft_value(np.array([0.0, 1.0]), 1e-4) == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("beta", [0.0, -1.0])
    def test_rejects_non_positive_temperature(self, beta):
        with pytest.raises(DomainError):
            envs.soft_value(np.array([0.0, 1.0]), beta)

    @pytest.mark.property
    def test_shift_identity(self):
        gen = np.random.default_rng(9)
        for _ in range(1000):
            q = gen.normal(0.0, 3.0, size=int(gen.integers(1, 8)))
            c = float(gen.normal(0.0, 5.0))
            beta = float(gen.uniform(0.05, 5.0))
            assert envs.soft_value(q + c, beta) - envs.soft_value(q, beta) == pytest.approx(c, abs=1e-10)

    @pytest.mark.property
    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_noisy_bandit_soft_value_gap_is_omega_beta(self, bandit_env, beta):
        # q = q* - g with one noise draw g ~ G(0, beta) per state, shared by every action
        q_star = bandit_env.network_output(np.linspace(-1.0, 1.0, 41))
        g = gumbel_sample(np.random.default_rng(int(beta * 100)), GumbelParams(location=0.0, scale=beta), 10 ** 4)
        reference = envs.soft_value(q_star, beta)
        gaps = np.array([reference - envs.soft_value(q_star - noise, beta) for noise in g])
        standard_error = gaps.std(ddof=1) / math.sqrt(gaps.size)
        assert abs(gaps.mean() - OMEGA * beta) <= 3.0 * standard_error
