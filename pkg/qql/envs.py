## Toy MDPs with known dynamics and brute-force oracles for Q*, V* and the soft value.

import logging
from collections import deque
from dataclasses import dataclass, replace
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from config.config import Config
from qql import nnet
from qql.errors import DomainError, ShapeError, UnsupportedError

logger = logging.getLogger(__name__)

EnvId = Literal['grid5', 'pointmass', 'gumbel-bandit']
ENV_IDS: Tuple[str, ...] = ('grid5', 'pointmass', 'gumbel-bandit')


## Which toy environment and the seed fixing any random construction in it
class EnvSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: EnvId
    seed: int = 0


@dataclass(frozen=True)
class GridState:
    cell: int
    t: int = 0


@dataclass(frozen=True)
class PointState:
    position: Tuple[float, float]
    t: int = 0


@dataclass(frozen=True)
class BanditState:
    t: int = 0


EnvState = Union[GridState, PointState, BanditState]


## Oracle tables for a finite MDP; v_soft is filled by with_soft
@dataclass(frozen=True)
class TabularSolution:
    q_star: np.ndarray
    v_star: np.ndarray
    gamma: float
    v_soft: Optional[np.ndarray] = None
    beta: Optional[float] = None

    ## Copy with the soft value of every state at temperature beta
    def with_soft(self, beta: float) -> 'TabularSolution':
        v_soft = np.array([soft_value(row, beta) for row in self.q_star])
        return replace(self, v_soft=v_soft, beta=beta)


## beta * log sum_a exp(q(a) / beta), shifted by the max for stability
def soft_value(q_row: np.ndarray, beta: float) -> float:
    if not beta > 0:
        raise DomainError(f"Soft value temperature must be positive, got {beta}")
    q = np.asarray(q_row, dtype=np.float64).ravel()
    if q.size == 0 or not np.all(np.isfinite(q)):
        raise DomainError('Soft value needs a non-empty finite row')
    top = float(q.max())
    return top + beta * float(np.log(np.sum(np.exp((q - top) / beta))))


## 5x5 deterministic gridworld, goal in the bottom-right corner
class Grid5Env:

    size = 5
    n_cells = 25
    goal = 24
    n_actions = 4
    horizon = 50
    obs_dim = 25
    discrete = True
    action_dim = 1
    has_oracle = True
    # up, right, down, left as (row, col) offsets
    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

    def __init__(self, spec: EnvSpec, gamma: float = Config.DEFAULT_GAMMA):
        self.spec = spec
        self.gamma = gamma
        self._solution: Optional[TabularSolution] = None

    ## Cell reached from a cell by an action; walls leave the cell unchanged
    def move(self, cell: int, action: int) -> int:
        row, col = divmod(cell, self.size)
        d_row, d_col = self.MOVES[action]
        new_row, new_col = row + d_row, col + d_col
        if 0 <= new_row < self.size and 0 <= new_col < self.size:
            return new_row * self.size + new_col
        return cell

    def reset(self, rng: np.random.Generator) -> GridState:
        cell = int(rng.integers(0, self.n_cells - 1))
        return GridState(cell=cell if cell < self.goal else cell + 1, t=0)

    def check_action(self, action) -> int:
        a = np.asarray(action)
        if a.size != 1:
            raise ShapeError(f"grid5 expects a single action index, got shape {a.shape}")
        index = int(a.reshape(-1)[0])
        if not 0 <= index < self.n_actions:
            raise ShapeError(f"grid5 action {index} outside [0, {self.n_actions})")
        return index

    def step(self, state: GridState, action, rng: np.random.Generator) -> Tuple[GridState, float, bool]:
        next_cell = self.move(state.cell, self.check_action(action))
        t = state.t + 1
        reached = next_cell == self.goal
        return GridState(cell=next_cell, t=t), (1.0 if reached else 0.0), bool(reached or t >= self.horizon)

    def observe(self, state: GridState) -> np.ndarray:
        obs = np.zeros(self.obs_dim, dtype=np.float64)
        obs[state.cell] = 1.0
        return obs

    def solution(self) -> TabularSolution:
        if self._solution is None:
            self._solution = solve_tabular(self, self.gamma)
        return self._solution

    ## Greedy action under the oracle Q*
    def oracle_action(self, state: GridState) -> int:
        return int(np.argmax(self.solution().q_star[state.cell]))


## 2-D point moved by bounded velocity commands toward a fixed goal
class PointMassEnv:

    goal = (0.5, 0.5)
    horizon = 40
    obs_dim = 2
    discrete = False
    action_dim = 2
    step_size = 0.2
    has_oracle = True

    def __init__(self, spec: EnvSpec):
        self.spec = spec

    def reset(self, rng: np.random.Generator) -> PointState:
        x, y = rng.uniform(-1.0, 1.0, size=2)
        return PointState(position=(float(x), float(y)), t=0)

    def check_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.size != self.action_dim:
            raise ShapeError(f"pointmass expects a {self.action_dim}-dim action, got {a.size}")
        return np.clip(a, -1.0, 1.0)

    def step(self, state: PointState, action, rng: np.random.Generator) -> Tuple[PointState, float, bool]:
        a = self.check_action(action)
        position = np.clip(np.asarray(state.position) + self.step_size * a, -1.0, 1.0)
        reward = -float(np.linalg.norm(position - np.asarray(self.goal)))
        t = state.t + 1
        return PointState(position=(float(position[0]), float(position[1])), t=t), reward, t >= self.horizon

    def observe(self, state: PointState) -> np.ndarray:
        return np.asarray(state.position, dtype=np.float64)

    ## Scripted controller heading straight for the goal
    def oracle_action(self, state: PointState) -> np.ndarray:
        delta = (np.asarray(self.goal) - np.asarray(state.position)) / self.step_size
        return np.clip(delta, -1.0, 1.0)


## Single-state bandit whose reward is a fixed seeded 1-16-16-1 ReLU network of the action
class GumbelBanditEnv:

    horizon = 1
    obs_dim = 1
    discrete = False
    action_dim = 1
    has_oracle = False
    network_spec = nnet.MlpSpec(input_dim=1, hidden_dims=[16, 16], output_dim=1)

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.params = nnet.init_params(self.network_spec, spec.seed)

    ## Network output for a batch of scalar actions
    def network_output(self, actions: np.ndarray) -> np.ndarray:
        a = np.asarray(actions, dtype=np.float64).reshape(-1, 1)
        return nnet.forward(self.network_spec, self.params, a)[:, 0]

    def reset(self, rng: np.random.Generator) -> BanditState:
        return BanditState(t=0)

    def check_action(self, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.size != 1:
            raise ShapeError(f"gumbel-bandit expects a 1-dim action, got {a.size}")
        return np.clip(a, -1.0, 1.0)

    def step(self, state: BanditState, action, rng: np.random.Generator) -> Tuple[BanditState, float, bool]:
        a = self.check_action(action)
        return BanditState(t=state.t + 1), float(self.network_output(a)[0]), True

    def observe(self, state: BanditState) -> np.ndarray:
        return np.zeros(1, dtype=np.float64)

    def oracle_action(self, state: BanditState):
        raise UnsupportedError('gumbel-bandit has no oracle policy')


Env = Union[Grid5Env, PointMassEnv, GumbelBanditEnv]


## Build an environment from its id (or spec) and seed
def make_env(env: Union[str, EnvSpec], seed: int = 0) -> Env:
    spec = env if isinstance(env, EnvSpec) else EnvSpec(id=env, seed=seed)
    if spec.id == 'grid5':
        return Grid5Env(spec)
    if spec.id == 'pointmass':
        return PointMassEnv(spec)
    return GumbelBanditEnv(spec)


def reset(env: Env, rng: np.random.Generator) -> EnvState:
    return env.reset(rng)


def step(env: Env, state: EnvState, action, rng: np.random.Generator) -> Tuple[EnvState, float, bool]:
    return env.step(state, action, rng)


def observe(env: Env, state: EnvState) -> np.ndarray:
    return env.observe(state)


def oracle_action(env: Env, state: EnvState):
    return env.oracle_action(state)


## Breadth-first step counts from every grid cell to the goal
def shortest_distances(env: Grid5Env) -> np.ndarray:
    if not isinstance(env, Grid5Env):
        raise UnsupportedError(f"Shortest distances need a finite gridworld, got {env.spec.id}")
    distances = np.full(env.n_cells, -1, dtype=np.int64)
    distances[env.goal] = 0
    queue = deque([env.goal])
    while queue:
        cell = queue.popleft()
        for other in range(env.n_cells):
            if distances[other] >= 0:
                continue
            if any(env.move(other, a) == cell for a in range(env.n_actions)):
                distances[other] = distances[cell] + 1
                queue.append(other)
    return distances


## Value iteration to a sup-norm residual below tolerance; the goal is absorbing with value 0
def solve_tabular(env: Env, gamma: float, initial_v: Optional[np.ndarray] = None) -> TabularSolution:
    if not isinstance(env, Grid5Env):
        raise UnsupportedError(f"Tabular oracle needs a finite environment, got {env.spec.id}")
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"Discount must lie in [0, 1), got {gamma}")

    next_cell = np.array([[env.move(s, a) for a in range(env.n_actions)] for s in range(env.n_cells)])
    reward = (next_cell == env.goal).astype(np.float64)
    continues = 1.0 - reward
    active = np.arange(env.n_cells) != env.goal

    v = np.zeros(env.n_cells) if initial_v is None else np.asarray(initial_v, dtype=np.float64).copy()
    for iteration in range(1, Config.VI_MAX_ITER + 1):
        q = (reward + gamma * continues * v[next_cell]) * active[:, None]
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < Config.VI_TOLERANCE:
            break
    logger.debug(f"Value iteration finished after {iteration} sweeps (residual {residual:.3g})")
    return TabularSolution(q_star=q, v_star=v, gamma=gamma)
