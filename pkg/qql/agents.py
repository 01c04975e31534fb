## Update steps composing networks and losses: QQL, the XQL baseline and behavior cloning.

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config.config import Config
from qql import nnet
from qql.data import Batch
from qql.errors import TrainingDivergenceError
from qql.gumbel import quantile_levels
from qql.losses import (
    PolicyWeightsConfig,
    ValuePairReadout,
    awr_policy_loss,
    beta_from_values,
    bellman_target,
    qql_awr_weight,
    qql_value_loss_grads,
    qql_value_losses,
    squared_error,
    xql_awr_weight,
    xql_value_loss,
    xql_value_loss_grad_v,
)
from qql.policy import CategoricalHead, GaussianHead
from qql.rng import derive_seed

logger = logging.getLogger(__name__)

Head = Union[CategoricalHead, GaussianHead]

# Online networks with their own optimizer
TRAINABLE = ('q1', 'q2', 'v1', 'v2', 'pi')


## Every training knob; defaults follow the QQL hyperparameter table
class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    gamma: float = Config.DEFAULT_GAMMA
    tau: float = Config.DEFAULT_TAU
    batch_size: int = Config.DEFAULT_BATCH_SIZE
    lr_v: float = Config.DEFAULT_LR
    lr_q: float = Config.DEFAULT_LR
    lr_pi: float = Config.DEFAULT_LR
    lam: float = Field(default=Config.DEFAULT_LAMBDA, alias='lambda')
    zeta: float = Config.DEFAULT_ZETA
    beta_low: float = Config.DEFAULT_BETA_LOW
    weight_cap: float = Config.DEFAULT_WEIGHT_CAP
    beta: float = Config.DEFAULT_XQL_BETA
    steps: int = Config.DEFAULT_STEPS
    seed: int = Config.DEFAULT_SEED
    hidden_dims: List[int] = Field(default_factory=Config.default_hidden_dims)
    eval_interval: int = Config.EVAL_INTERVAL
    eval_episodes: int = Config.EVAL_EPISODES

    ## Discount in [0, 1)
    @field_validator('gamma')
    @classmethod
    def validate_gamma(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError('gamma must lie in [0, 1)')
        return v

    ## Target update rate in [0, 1]
    @field_validator('tau')
    @classmethod
    def validate_tau(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError('tau must lie in [0, 1]')
        return v

    ## Strictly positive reals
    @field_validator('lr_v', 'lr_q', 'lr_pi', 'zeta', 'beta_low', 'weight_cap', 'beta')
    @classmethod
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError('learning rates, zeta, beta_low, weight_cap and beta must be positive')
        return v

    ## lambda is a non-negative weight
    @field_validator('lam')
    @classmethod
    def validate_lambda(cls, v):
        if v < 0:
            raise ValueError('lambda must be non-negative')
        return v

    ## Counts
    @field_validator('batch_size', 'eval_interval', 'eval_episodes')
    @classmethod
    def validate_count(cls, v):
        if v < 1:
            raise ValueError('batch_size, eval_interval and eval_episodes must be at least 1')
        return v

    ## Step budget may be zero
    @field_validator('steps')
    @classmethod
    def validate_steps(cls, v):
        if v < 0:
            raise ValueError('steps must be non-negative')
        return v

    ## Hidden layers are positive
    @field_validator('hidden_dims')
    @classmethod
    def validate_hidden(cls, v):
        if not v or any(d < 1 for d in v):
            raise ValueError('hidden_dims must be a non-empty list of positive sizes')
        return list(v)

    def policy_weights(self) -> PolicyWeightsConfig:
        return PolicyWeightsConfig(zeta=self.zeta, beta_low=self.beta_low, weight_cap=self.weight_cap)


## Ablation switches for the value regularisation term and the conservative level shift
class AblationFlags(BaseModel):
    model_config = ConfigDict(frozen=True)

    value_regularization: bool = True
    conservative_estimation: bool = True


## Per-update diagnostics, one row of metrics.csv
@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss_v1: float = 0.0
    loss_v2: float = 0.0
    loss_q: float = 0.0
    loss_pi: float = 0.0
    beta_mean: float = 0.0
    beta_raw_mean: float = 0.0
    weight_mean: float = 0.0
    q_mean: float = 0.0
    grad_norm_v1: float = 0.0
    grad_norm_v2: float = 0.0
    grad_norm_q: float = 0.0
    grad_norm_pi: float = 0.0

    def as_row(self) -> Dict[str, float]:
        return asdict(self)


## Networks, targets and optimizer states of one agent
@dataclass(frozen=True)
class AgentState:
    env_id: str
    discrete: bool
    action_size: int
    specs: Dict[str, nnet.MlpSpec]
    params: Dict[str, np.ndarray]
    optimizers: Dict[str, nnet.OptimizerState]
    step: int = 0

    @property
    def head(self) -> Head:
        return CategoricalHead(self.action_size) if self.discrete else GaussianHead(self.action_size)

    def spec_for(self, name: str) -> nnet.MlpSpec:
        if name.startswith('q'):
            return self.specs['q']
        if name.startswith('v'):
            return self.specs['v']
        return self.specs['pi']

    @property
    def log_std(self) -> Optional[np.ndarray]:
        return self.params.get('log_std')


def make_head(env) -> Head:
    return CategoricalHead(env.n_actions) if env.discrete else GaussianHead(env.action_dim)


## Fresh agent for an environment; zero=True gives all-zero networks
def init_agent_state(env, cfg: TrainConfig, seed: int, zero: bool = False) -> AgentState:
    head = make_head(env)
    specs = {
        'q': nnet.MlpSpec(input_dim=env.obs_dim + head.feature_dim, hidden_dims=cfg.hidden_dims, output_dim=1),
        'v': nnet.MlpSpec(input_dim=env.obs_dim, hidden_dims=cfg.hidden_dims, output_dim=1),
        'pi': nnet.MlpSpec(input_dim=env.obs_dim, hidden_dims=cfg.hidden_dims, output_dim=head.output_dim),
    }
    params: Dict[str, np.ndarray] = {}
    for index, name in enumerate(TRAINABLE):
        spec = specs['q'] if name.startswith('q') else specs['v'] if name.startswith('v') else specs['pi']
        params[name] = nnet.init_params(spec, derive_seed(seed, 'network', index), zero=zero)
    params['q1_target'] = params['q1'].copy()
    params['q2_target'] = params['q2'].copy()

    lrs = {'q1': cfg.lr_q, 'q2': cfg.lr_q, 'v1': cfg.lr_v, 'v2': cfg.lr_v, 'pi': cfg.lr_pi}
    optimizers = {name: nnet.new_optimizer(params[name], lrs[name]) for name in TRAINABLE}
    if not head.discrete:
        params['log_std'] = np.zeros(head.action_dim, dtype=np.float64)
        optimizers['log_std'] = nnet.new_optimizer(params['log_std'], cfg.lr_pi)

    logger.info(f"Initialised agent for {env.spec.id} with hidden dims {cfg.hidden_dims}")
    return AgentState(
        env_id=env.spec.id,
        discrete=head.discrete,
        action_size=head.output_dim,
        specs=specs,
        params=params,
        optimizers=optimizers,
        step=0,
    )


def _q(state: AgentState, name: str, s: np.ndarray, encoded_a: np.ndarray) -> np.ndarray:
    return nnet.forward(state.specs['q'], state.params[name], np.hstack([s, encoded_a]))[:, 0]


def _q_target_min(state: AgentState, s: np.ndarray, encoded_a: np.ndarray) -> np.ndarray:
    return np.minimum(_q(state, 'q1_target', s, encoded_a), _q(state, 'q2_target', s, encoded_a))


def _v(state: AgentState, name: str, s: np.ndarray) -> np.ndarray:
    return nnet.forward(state.specs['v'], state.params[name], s)[:, 0]


## Adam step on one named parameter vector, written back into the dicts
def _apply(params: Dict[str, np.ndarray], optimizers: Dict[str, nnet.OptimizerState],
           name: str, gradient: np.ndarray) -> None:
    params[name], optimizers[name] = nnet.optimizer_step(optimizers[name], params[name], gradient, name=name)


## Value-network regression of a fixed adjoint: gradient of mean loss w.r.t. params
def _value_grad(state: AgentState, name: str, inputs: np.ndarray, adjoint: np.ndarray) -> np.ndarray:
    gradient, _ = nnet.grad(state.specs['v'], state.params[name], inputs, adjoint[:, None])
    return gradient


## Twin-Q regression toward a fixed target; returns mean loss and gradient norm
def _q_step(state: AgentState, params, optimizers, x_sa: np.ndarray, target: np.ndarray) -> Tuple[float, float]:
    losses, norms = [], []
    for name in ('q1', 'q2'):
        pred, cache = nnet.forward_cached(state.specs['q'], state.params[name], x_sa)
        loss, d_pred = squared_error(pred[:, 0], target)
        gradient, _ = nnet.backward(state.specs['q'], state.params[name], cache, d_pred[:, None])
        _apply(params, optimizers, name, gradient)
        losses.append(loss)
        norms.append(nnet.global_norm(gradient))
    return float(np.mean(losses)), float(np.sqrt(np.sum(np.square(norms))))


## Weighted log-likelihood step on the policy; returns loss and gradient norm
def _policy_step(state: AgentState, params, optimizers, s: np.ndarray, a: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    head = state.head
    out, cache = nnet.forward_cached(state.specs['pi'], state.params['pi'], s)
    log_std = state.log_std
    loss = awr_policy_loss(weights, head.log_prob(out, a, log_std))
    coef = -np.asarray(weights, dtype=np.float64) / s.shape[0]
    grad_out, grad_log_std = head.log_prob_grad(out, a, coef, log_std)
    gradient, _ = nnet.backward(state.specs['pi'], state.params['pi'], cache, grad_out)
    _apply(params, optimizers, 'pi', gradient)
    norm = nnet.global_norm(gradient)
    if grad_log_std is not None:
        _apply(params, optimizers, 'log_std', grad_log_std)
        norm = float(np.sqrt(norm ** 2 + nnet.global_norm(grad_log_std) ** 2))
    return loss, norm


def _soft_update_targets(params: Dict[str, np.ndarray], tau: float) -> None:
    for name in ('q1', 'q2'):
        params[f'{name}_target'] = nnet.soft_update(params[f'{name}_target'], params[name], tau)


def _check_finite(metrics: StepMetrics, params: Dict[str, np.ndarray]) -> None:
    for key, value in metrics.as_row().items():
        if not np.isfinite(value):
            logger.error(f"Non-finite {key} at step {metrics.step}")
            raise TrainingDivergenceError(f"Non-finite {key}", metrics.step)
    for name, values in params.items():
        if not np.all(np.isfinite(values)):
            logger.error(f"Non-finite parameters in {name} at step {metrics.step}")
            raise TrainingDivergenceError(f"Non-finite parameters in '{name}'", metrics.step)


## One QQL iteration: values, then Q, then policy, then the target soft update
def qql_update(state: AgentState, batch: Batch, cfg: TrainConfig, flags: AblationFlags,
               rng: np.random.Generator) -> Tuple[AgentState, StepMetrics]:
    head = state.head
    levels = quantile_levels()
    n = len(batch)
    params = dict(state.params)
    optimizers = dict(state.optimizers)

    enc_a = head.encode(batch.a)
    q_data = _q_target_min(state, batch.s, enc_a)

    # one fresh policy action per next state; no gradient reaches the policy from here
    pi_next = nnet.forward(state.specs['pi'], state.params['pi'], batch.s_next)
    a_next = head.sample(rng, pi_next, state.log_std)
    q_pi = _q_target_min(state, batch.s_next, head.encode(a_next))

    lam = cfg.lam if flags.value_regularization else 0.0
    stacked = np.vstack([batch.s, batch.s_next])
    v1_all, v2_all = _v(state, 'v1', stacked), _v(state, 'v2', stacked)
    at_s = ValuePairReadout(v1=v1_all[:n], v2=v2_all[:n])
    at_next = ValuePairReadout(v1=v1_all[n:], v2=v2_all[n:])
    loss_v1, loss_v2 = qql_value_losses(q_data, q_pi, at_s, at_next, lam, levels, flags.conservative_estimation)
    d_v1_s, d_v1_next, d_v2_s, d_v2_next = qql_value_loss_grads(
        q_data, q_pi, at_s, at_next, lam, levels, flags.conservative_estimation)
    grad_v1 = _value_grad(state, 'v1', stacked, np.concatenate([d_v1_s, d_v1_next]) / n)
    grad_v2 = _value_grad(state, 'v2', stacked, np.concatenate([d_v2_s, d_v2_next]) / n)
    _apply(params, optimizers, 'v1', grad_v1)
    _apply(params, optimizers, 'v2', grad_v2)
    state = replace(state, params=params, optimizers=optimizers)
    params, optimizers = dict(params), dict(optimizers)

    # Q regression; the (V-hat - V) correction is held fixed
    v1_s, v2_s = _v(state, 'v1', batch.s), _v(state, 'v2', batch.s)
    v2_next = _v(state, 'v2', batch.s_next)
    target = bellman_target(batch.r, v2_next, v1_s, v2_s, cfg.gamma, batch.terminal)
    loss_q, norm_q = _q_step(state, params, optimizers, np.hstack([batch.s, enc_a]), target)

    readout = ValuePairReadout(v1=v1_s, v2=v2_s)
    weights = qql_awr_weight(q_data, readout, cfg.policy_weights())
    loss_pi, norm_pi = _policy_step(state, params, optimizers, batch.s, batch.a, weights)

    _soft_update_targets(params, cfg.tau)

    step = state.step + 1
    metrics = StepMetrics(
        step=step,
        loss_v1=float(np.mean(loss_v1)),
        loss_v2=float(np.mean(loss_v2)),
        loss_q=loss_q,
        loss_pi=loss_pi,
        beta_mean=float(np.mean(beta_from_values(readout, cfg.beta_low, for_policy=True))),
        beta_raw_mean=float(np.mean(beta_from_values(readout, cfg.beta_low, for_policy=False))),
        weight_mean=float(np.mean(weights)),
        q_mean=float(np.mean(q_data)),
        grad_norm_v1=nnet.global_norm(grad_v1),
        grad_norm_v2=nnet.global_norm(grad_v2),
        grad_norm_q=norm_q,
        grad_norm_pi=norm_pi,
    )
    _check_finite(metrics, params)
    logger.debug(f"QQL step {step}: {metrics}")
    return replace(state, params=params, optimizers=optimizers, step=step), metrics


## One XQL iteration at a fixed temperature beta (V in the v1 slot)
def xql_update(state: AgentState, batch: Batch, cfg: TrainConfig, beta: float,
               rng: np.random.Generator) -> Tuple[AgentState, StepMetrics]:
    head = state.head
    n = len(batch)
    params = dict(state.params)
    optimizers = dict(state.optimizers)

    enc_a = head.encode(batch.a)
    q_data = _q_target_min(state, batch.s, enc_a)

    v_s = _v(state, 'v1', batch.s)
    loss_v = float(np.mean(xql_value_loss(q_data, v_s, beta)))
    grad_v = _value_grad(state, 'v1', batch.s, np.asarray(xql_value_loss_grad_v(q_data, v_s, beta)) / n)
    _apply(params, optimizers, 'v1', grad_v)
    state = replace(state, params=params, optimizers=optimizers)
    params, optimizers = dict(params), dict(optimizers)

    v_s = _v(state, 'v1', batch.s)
    v_next = _v(state, 'v1', batch.s_next)
    target = batch.r + cfg.gamma * (1.0 - batch.terminal) * v_next
    loss_q, norm_q = _q_step(state, params, optimizers, np.hstack([batch.s, enc_a]), target)

    weights = xql_awr_weight(q_data, v_s, beta, cfg.weight_cap)
    loss_pi, norm_pi = _policy_step(state, params, optimizers, batch.s, batch.a, weights)

    _soft_update_targets(params, cfg.tau)

    step = state.step + 1
    metrics = StepMetrics(
        step=step,
        loss_v1=loss_v,
        loss_q=loss_q,
        loss_pi=loss_pi,
        beta_mean=beta,
        beta_raw_mean=beta,
        weight_mean=float(np.mean(weights)),
        q_mean=float(np.mean(q_data)),
        grad_norm_v1=nnet.global_norm(grad_v),
        grad_norm_q=norm_q,
        grad_norm_pi=norm_pi,
    )
    _check_finite(metrics, params)
    logger.debug(f"XQL step {step}: {metrics}")
    return replace(state, params=params, optimizers=optimizers, step=step), metrics


## One behavior-cloning step: maximise log pi(a|s) on the batch
def bc_update(state: AgentState, batch: Batch, cfg: TrainConfig,
              rng: Optional[np.random.Generator] = None) -> Tuple[AgentState, StepMetrics]:
    params = dict(state.params)
    optimizers = dict(state.optimizers)
    loss_pi, norm_pi = _policy_step(state, params, optimizers, batch.s, batch.a, np.ones(len(batch)))
    step = state.step + 1
    metrics = StepMetrics(step=step, loss_pi=loss_pi, weight_mean=1.0, grad_norm_pi=norm_pi)
    _check_finite(metrics, params)
    return replace(state, params=params, optimizers=optimizers, step=step), metrics


## Policy action for one observation: mode when deterministic, a sample otherwise
def act(state: AgentState, obs: np.ndarray, deterministic: bool = True, rng: Optional[np.random.Generator] = None):
    head = state.head
    out = nnet.forward(state.specs['pi'], state.params['pi'], np.asarray(obs, dtype=np.float64)[None, :])
    action = head.mode(out, state.log_std) if deterministic else head.sample(rng, out, state.log_std)
    return int(action[0]) if head.discrete else action[0]


## Mean of the online twin-Q minimum over stacked dataset arrays
def learned_q_mean(state: AgentState, arrays: Batch) -> float:
    enc_a = state.head.encode(arrays.a)
    q = np.minimum(_q(state, 'q1', arrays.s, enc_a), _q(state, 'q2', arrays.s, enc_a))
    return float(np.mean(q))


## Named arrays and optimizer moments as plain JSON-ready structures
def state_to_dict(state: AgentState) -> Dict:
    return {
        'env_id': state.env_id,
        'discrete': state.discrete,
        'action_size': state.action_size,
        'specs': {name: spec.model_dump() for name, spec in state.specs.items()},
        'params': {name: values.tolist() for name, values in state.params.items()},
        'optimizers': {
            name: {'m': opt.m.tolist(), 'v': opt.v.tolist(), 'step': opt.step, 'lr': opt.lr,
                   'beta1': opt.beta1, 'beta2': opt.beta2, 'eps': opt.eps}
            for name, opt in state.optimizers.items()
        },
        'step': state.step,
    }


def state_from_dict(document: Dict) -> AgentState:
    return AgentState(
        env_id=document['env_id'],
        discrete=bool(document['discrete']),
        action_size=int(document['action_size']),
        specs={name: nnet.MlpSpec(**spec) for name, spec in document['specs'].items()},
        params={name: np.asarray(values, dtype=np.float64) for name, values in document['params'].items()},
        optimizers={
            name: nnet.OptimizerState(m=np.asarray(opt['m'], dtype=np.float64), v=np.asarray(opt['v'], dtype=np.float64),
                                      step=int(opt['step']), lr=float(opt['lr']), beta1=float(opt['beta1']),
                                      beta2=float(opt['beta2']), eps=float(opt['eps']))
            for name, opt in document['optimizers'].items()
        },
        step=int(document['step']),
    )
