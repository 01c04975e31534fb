## Policy evaluation, normalized scoring, reference returns and the Gumbel-scale toy experiment.

import csv
import json
import logging
import statistics
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from config.config import Config
from qql import envs
from qql.errors import DomainError, PreconditionError, SchemaError, UnsupportedError
from qql.gumbel import GofReport, GumbelParams, gumbel_mle_fit, gumbel_sample, ks_test
from qql.rng import make_indexed_stream, make_stream
from utils.validators import RecordValidator

logger = logging.getLogger(__name__)

Policy = Callable[[np.ndarray], object]


## One row of the Gumbel-scale experiment
class BetaScaleRow(BaseModel):
    std: float
    fit: GumbelParams
    gof: GofReport


## Random and expert reference returns of one environment
class ReferenceReturns(BaseModel):
    random_return: float
    expert_return: float
    episodes: int = Config.REFERENCE_EPISODES


## Undiscounted (or discounted, if given) episode returns of a policy
def evaluate(env, policy: Policy, episodes: int, rng: np.random.Generator,
             discount: float = None) -> Tuple[float, float, List[float]]:
    if episodes < 1:
        raise PreconditionError(f"Evaluation needs at least one episode, got {episodes}")
    returns = []
    for _ in range(episodes):
        state = env.reset(rng)
        total, factor, terminal = 0.0, 1.0, False
        while not terminal:
            state_next, reward, terminal = env.step(state, policy(env.observe(state)), rng)
            total += factor * reward
            if discount is not None:
                factor *= discount
            state = state_next
        returns.append(total)
    # aggregate is independent of episode order
    ordered = sorted(returns)
    mean = statistics.fmean(ordered)
    std = statistics.pstdev(ordered) if len(ordered) > 1 else 0.0
    return mean, std, returns


## Oracle policy for an environment (grid5 greedy, pointmass scripted)
def oracle_policy(env) -> Policy:
    if not env.has_oracle:
        raise UnsupportedError(f"{env.spec.id} has no oracle policy")

    def policy(obs: np.ndarray):
        return env.oracle_action(_state_from_obs(env, obs))

    return policy


def _state_from_obs(env, obs: np.ndarray):
    if isinstance(env, envs.Grid5Env):
        return envs.GridState(cell=int(np.argmax(obs)))
    return envs.PointState(position=(float(obs[0]), float(obs[1])))


## Uniformly random policy over the env's action space
def random_policy(env, rng: np.random.Generator) -> Policy:
    def policy(obs: np.ndarray):
        if env.discrete:
            return int(rng.integers(0, env.n_actions))
        return rng.uniform(-1.0, 1.0, size=env.action_dim)

    return policy


## 100 * (ret - random) / (expert - random)
def normalized_score(ret: float, random_ret: float, expert_ret: float) -> float:
    span = expert_ret - random_ret
    if not (np.isfinite(span) and span > 0.0):
        raise DomainError(f"Expert return {expert_ret} must exceed random return {random_ret}")
    return 100.0 * (ret - random_ret) / span


## Reference returns from a uniform-random policy and the env's oracle
def compute_references(env, episodes: int = Config.REFERENCE_EPISODES, seed: int = 0) -> ReferenceReturns:
    random_ret, _, _ = evaluate(env, random_policy(env, make_stream(seed, 'actions')), episodes, make_stream(seed, 'eval'))
    expert_ret, _, _ = evaluate(env, oracle_policy(env), episodes, make_stream(seed, 'eval'))
    logger.info(f"References for {env.spec.id}: random {random_ret:.4f}, expert {expert_ret:.4f}")
    return ReferenceReturns(random_return=random_ret, expert_return=expert_ret, episodes=episodes)


def save_references(references: Dict[str, ReferenceReturns], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({env_id: ref.model_dump() for env_id, ref in sorted(references.items())}, f, indent=2)
        f.write('\n')
    return path


def load_references(path: Union[str, Path]) -> Dict[str, ReferenceReturns]:
    with open(path, 'r', encoding='utf-8') as f:
        document = json.load(f)
    errors = RecordValidator.validate_references(document)
    if errors:
        raise SchemaError(f"References file {path} is invalid: {errors[0]}")
    return {env_id: ReferenceReturns(**entry) for env_id, entry in document.items()}


## Fit a Gumbel law to -Q(s, a) = -Q*(s, a) + g over Gaussian policy actions, for each policy std
def beta_scale_experiment(seed: int, policy_stds: Sequence[float], n_actions: int,
                          beta_true: float) -> List[BetaScaleRow]:
    if n_actions < Config.BETA_TOY_MIN_ACTIONS:
        raise PreconditionError(f"Need at least {Config.BETA_TOY_MIN_ACTIONS} actions, got {n_actions}")
    if not beta_true > 0:
        raise DomainError(f"Noise scale must be positive, got {beta_true}")

    bandit = envs.GumbelBanditEnv(envs.EnvSpec(id='gumbel-bandit', seed=seed))
    noise = GumbelParams(location=0.0, scale=beta_true)
    rows = []
    for index, std in enumerate(policy_stds):
        if not std > 0:
            raise DomainError(f"Policy std must be positive, got {std}")
        action_rng = make_indexed_stream(seed, 'actions', index)
        noise_rng = make_indexed_stream(seed, 'noise', index)
        actions = np.clip(std * action_rng.standard_normal(n_actions), -1.0, 1.0)
        # the fixed network plays the role of -Q*(s, .)
        neg_q = bandit.network_output(actions) + gumbel_sample(noise_rng, noise, n_actions)
        fit = gumbel_mle_fit(neg_q)
        gof = ks_test(neg_q, fit)
        logger.info(f"std={std:g}: loc={fit.location:.4f}, scale={fit.scale:.4f}, p={gof.p_value:.3f}")
        rows.append(BetaScaleRow(std=float(std), fit=fit, gof=gof))
    return rows


## Experiment table as CSV with columns std, loc, scale, ks, p
def write_experiment_csv(rows: Sequence[BetaScaleRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(['std', 'loc', 'scale', 'ks', 'p'])
        for row in rows:
            writer.writerow([row.std, row.fit.location, row.fit.scale, row.gof.ks_statistic, row.gof.p_value])
    return path
