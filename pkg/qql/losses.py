## Scalar objectives: pinball loss, XQL Gumbel loss, QQL value losses, Bellman target, beta estimate and AWR weights.
##
## Every function is elementwise over numpy arrays and returns a float for scalar inputs.
## Derivative helpers return the gradient of the per-sample loss w.r.t. the value prediction.

import math
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.config import Config
from qql.errors import DomainError
from qql.gumbel import OMEGA, QuantileLevels


Real = Union[float, np.ndarray]


## Readouts of V_psi1(s) and V-hat_psi2(s) at the same states
@dataclass(frozen=True)
class ValuePairReadout:
    v1: Real
    v2: Real


## Knobs of the beta-free AWR weight
class PolicyWeightsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    zeta: float = Config.DEFAULT_ZETA
    beta_low: float = Config.DEFAULT_BETA_LOW
    weight_cap: float = Config.DEFAULT_WEIGHT_CAP

    ## All three knobs are strictly positive
    @field_validator('zeta', 'beta_low', 'weight_cap')
    @classmethod
    def validate_positive(cls, v):
        if not v > 0:
            raise ValueError('zeta, beta_low and weight_cap must be positive')
        return v


def _out(value: np.ndarray) -> Real:
    return float(value) if np.ndim(value) == 0 else value


def _arr(x: Real) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


## Pinball loss u * (tau - 1[u < 0])
def quantile_loss(u: Real, tau: float) -> Real:
    if not 0.0 <= tau <= 1.0:
        raise DomainError(f"Quantile level must lie in [0, 1], got {tau}")
    u = _arr(u)
    return _out(u * (tau - (u < 0.0)))


## d quantile_loss / d u
def quantile_loss_grad(u: Real, tau: float) -> Real:
    return _out(tau - (_arr(u) < 0.0))


## exp(z) - z - 1 with z = (q - v) / beta; exp is continued along its tangent beyond the clamp
def xql_value_loss(q: Real, v: Real, beta: float) -> Real:
    if not beta > 0:
        raise DomainError(f"XQL temperature must be positive, got {beta}")
    z = (_arr(q) - _arr(v)) / beta
    zc = np.minimum(z, Config.XQL_EXP_CLAMP)
    ez = np.exp(zc)
    return _out(ez * (1.0 + z - zc) - z - 1.0)


## d xql_value_loss / d v
def xql_value_loss_grad_v(q: Real, v: Real, beta: float) -> Real:
    if not beta > 0:
        raise DomainError(f"XQL temperature must be positive, got {beta}")
    z = (_arr(q) - _arr(v)) / beta
    return _out(-(np.exp(np.minimum(z, Config.XQL_EXP_CLAMP)) - 1.0) / beta)


def _policy_levels(levels: QuantileLevels, conservative: bool) -> Tuple[float, float]:
    if conservative:
        return levels.alpha0, levels.alpha1
    return levels.alpha1, levels.alpha2


## Per-sample QQL value losses with the lambda-weighted policy-action term
def qql_value_losses(q_data: Real, q_pi: Real, readout_at_s: ValuePairReadout,
                     readout_at_s_next: ValuePairReadout, lam: float, levels: QuantileLevels,
                     conservative: bool = True) -> Tuple[Real, Real]:
    low, high = _policy_levels(levels, conservative)
    q_data, q_pi = _arr(q_data), _arr(q_pi)
    loss_psi1 = quantile_loss(q_data - _arr(readout_at_s.v1), levels.alpha1)
    loss_psi2 = quantile_loss(q_data - _arr(readout_at_s.v2), levels.alpha2)
    if lam != 0.0:
        loss_psi1 = loss_psi1 + lam * _arr(quantile_loss(q_pi - _arr(readout_at_s_next.v1), low))
        loss_psi2 = loss_psi2 + lam * _arr(quantile_loss(q_pi - _arr(readout_at_s_next.v2), high))
    return _out(_arr(loss_psi1)), _out(_arr(loss_psi2))


## Gradients of qql_value_losses w.r.t. v1(s), v1(s'), v2(s), v2(s')
def qql_value_loss_grads(q_data: Real, q_pi: Real, readout_at_s: ValuePairReadout,
                         readout_at_s_next: ValuePairReadout, lam: float, levels: QuantileLevels,
                         conservative: bool = True) -> Tuple[Real, Real, Real, Real]:
    low, high = _policy_levels(levels, conservative)
    q_data, q_pi = _arr(q_data), _arr(q_pi)
    d_v1_s = -_arr(quantile_loss_grad(q_data - _arr(readout_at_s.v1), levels.alpha1))
    d_v2_s = -_arr(quantile_loss_grad(q_data - _arr(readout_at_s.v2), levels.alpha2))
    d_v1_next = -lam * _arr(quantile_loss_grad(q_pi - _arr(readout_at_s_next.v1), low))
    d_v2_next = -lam * _arr(quantile_loss_grad(q_pi - _arr(readout_at_s_next.v2), high))
    return _out(d_v1_s), _out(d_v1_next), _out(d_v2_s), _out(d_v2_next)


## r + gamma * V-hat(s') - (V-hat(s) - V(s)), bootstrap masked at terminals
def bellman_target(r: Real, v2_next: Real, v1_s: Real, v2_s: Real, gamma: float, terminal) -> Real:
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"Discount must lie in [0, 1), got {gamma}")
    keep = 1.0 - _arr(terminal).astype(np.float64)
    return _out(_arr(r) + gamma * keep * _arr(v2_next) - (_arr(v2_s) - _arr(v1_s)))


## (V-hat - V) / omega; on the policy path the absolute value clipped below at beta_low
def beta_from_values(readout: ValuePairReadout, beta_low: float, for_policy: bool) -> Real:
    if not beta_low > 0:
        raise DomainError(f"beta_low must be positive, got {beta_low}")
    raw = (_arr(readout.v2) - _arr(readout.v1)) / OMEGA
    if for_policy:
        return _out(np.maximum(np.abs(raw), beta_low))
    return _out(raw)


## exp((q - V-hat) / (zeta beta) + (q - V) / beta), capped
def qql_awr_weight(q: Real, readout: ValuePairReadout, cfg: PolicyWeightsConfig) -> Real:
    beta = _arr(beta_from_values(readout, cfg.beta_low, for_policy=True))
    q = _arr(q)
    exponent = (q - _arr(readout.v2)) / (cfg.zeta * beta) + (q - _arr(readout.v1)) / beta
    return _out(np.exp(np.minimum(exponent, math.log(cfg.weight_cap))))


## exp((q - v) / beta), capped
def xql_awr_weight(q: Real, v: Real, beta: float, weight_cap: float) -> Real:
    if not beta > 0:
        raise DomainError(f"XQL temperature must be positive, got {beta}")
    exponent = (_arr(q) - _arr(v)) / beta
    return _out(np.exp(np.minimum(exponent, math.log(weight_cap))))


## Weighted negative log-likelihood used for policy extraction
def awr_policy_loss(weights: np.ndarray, log_probs: np.ndarray) -> float:
    return float(-np.mean(_arr(weights) * _arr(log_probs)))


## Mean squared error of predictions against a fixed target, and its gradient
def squared_error(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    diff = _arr(pred) - _arr(target)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
