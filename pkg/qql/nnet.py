## Dense ReLU networks over flat parameter vectors, exact reverse-mode gradients and Adam.

import math
import logging
from dataclasses import dataclass, replace
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.config import Config
from qql.errors import DomainError, NonFiniteGradientError, ShapeError
from qql.rng import make_indexed_stream

logger = logging.getLogger(__name__)


# Flat float64 vector of weights and biases, layer by layer
ParamVector = np.ndarray


## Architecture of a fully connected network
class MlpSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_dim: int
    hidden_dims: List[int]
    output_dim: int
    activation: Literal['relu'] = 'relu'

    ## All dimensions are at least one
    @field_validator('input_dim', 'output_dim')
    @classmethod
    def validate_dim(cls, v):
        if v < 1:
            raise ValueError('Network dimensions must be at least 1')
        return v

    ## Hidden sizes are at least one each
    @field_validator('hidden_dims')
    @classmethod
    def validate_hidden(cls, v):
        if any(d < 1 for d in v):
            raise ValueError('Hidden layer sizes must be at least 1')
        return list(v)

    ## Consecutive layer widths from input to output
    def layer_sizes(self) -> List[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]


## Adam moment accumulators for one parameter vector
@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = Config.DEFAULT_LR
    beta1: float = Config.ADAM_BETA1
    beta2: float = Config.ADAM_BETA2
    eps: float = Config.ADAM_EPS


## Activations kept by the forward pass for the reverse pass
@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]


def param_count(spec: MlpSpec) -> int:
    sizes = spec.layer_sizes()
    return sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


## Views (W, b) into a flat vector; W has shape (fan_in, fan_out)
def unpack(spec: MlpSpec, params: ParamVector) -> List[Tuple[np.ndarray, np.ndarray]]:
    if params.ndim != 1 or params.size != param_count(spec):
        raise ShapeError(f"Parameter vector of length {params.size} does not match spec ({param_count(spec)})")
    layers = []
    offset = 0
    sizes = spec.layer_sizes()
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset:offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


## Uniform fan-in initialisation with a seed derived per layer index
def init_params(spec: MlpSpec, seed: int, zero: bool = False) -> ParamVector:
    params = np.zeros(param_count(spec), dtype=np.float64)
    if zero:
        return params
    for index, (w, b) in enumerate(unpack(spec, params)):
        rng = make_indexed_stream(seed, 'init', index)
        bound = math.sqrt(1.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return params


def _as_batch(spec: MlpSpec, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"Input of shape {np.shape(inputs)} does not match input_dim {spec.input_dim}")
    return x


## Forward pass keeping activations
def forward_cached(spec: MlpSpec, params: ParamVector, inputs: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x = _as_batch(spec, inputs)
    layers = unpack(spec, params)
    pre_activations, activations = [], []
    h = x
    for index, (w, b) in enumerate(layers):
        z = h @ w + b
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if index < len(layers) - 1 else z
        activations.append(h)
    return h, ForwardCache(inputs=x, pre_activations=pre_activations, activations=activations)


## Deterministic network output; 1-D input gives 1-D output
def forward(spec: MlpSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    out, _ = forward_cached(spec, params, inputs)
    return out[0] if np.ndim(inputs) == 1 else out


## Reverse pass of sum(output * adjoint): gradients for parameters and inputs
def backward(spec: MlpSpec, params: ParamVector, cache: ForwardCache, adjoint: np.ndarray) -> Tuple[ParamVector, np.ndarray]:
    delta = np.asarray(adjoint, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    batch = cache.inputs.shape[0]
    if delta.shape != (batch, spec.output_dim):
        raise ShapeError(f"Adjoint of shape {np.shape(adjoint)} does not match output ({batch}, {spec.output_dim})")

    layers = unpack(spec, params)
    gradient = np.zeros_like(params)
    grad_layers = unpack(spec, gradient)
    for index in range(len(layers) - 1, -1, -1):
        w, _ = layers[index]
        gw, gb = grad_layers[index]
        if index < len(layers) - 1:
            delta = delta * (cache.pre_activations[index] > 0.0)
        h_in = cache.inputs if index == 0 else cache.activations[index - 1]
        gw[...] = h_in.T @ delta
        gb[...] = delta.sum(axis=0)
        delta = delta @ w.T
    return gradient, delta


## Gradient of sum(output * adjoint) w.r.t. params and inputs
def grad(spec: MlpSpec, params: ParamVector, inputs: np.ndarray, adjoint: np.ndarray) -> Tuple[ParamVector, np.ndarray]:
    _, cache = forward_cached(spec, params, inputs)
    param_grad, input_grad = backward(spec, params, cache, adjoint)
    return param_grad, (input_grad[0] if np.ndim(inputs) == 1 else input_grad)


def new_optimizer(params: ParamVector, lr: float = Config.DEFAULT_LR) -> OptimizerState:
    return OptimizerState(m=np.zeros_like(params), v=np.zeros_like(params), step=0, lr=lr)


## One bias-corrected adaptive moment step; returns new params and state
def optimizer_step(state: OptimizerState, params: ParamVector, gradient: ParamVector,
                   name: str = 'params') -> Tuple[ParamVector, OptimizerState]:
    if gradient.shape != params.shape or state.m.shape != params.shape:
        raise ShapeError(f"Gradient {gradient.shape} / state {state.m.shape} do not match params {params.shape}")
    bad = np.flatnonzero(~np.isfinite(gradient))
    if bad.size:
        logger.error(f"Non-finite gradient for '{name}' at step {state.step}")
        raise NonFiniteGradientError(name, bad.tolist())

    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.v + (1.0 - state.beta2) * gradient * gradient
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, replace(state, m=m, v=v, step=step)


## Polyak averaging: target <- (1 - rate) * target + rate * online
def soft_update(target: ParamVector, online: ParamVector, rate: float) -> ParamVector:
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"Soft update rate must lie in [0, 1], got {rate}")
    if target.shape != online.shape:
        raise ShapeError(f"Target {target.shape} and online {online.shape} differ in shape")
    return (1.0 - rate) * target + rate * online


def global_norm(gradient: Optional[ParamVector]) -> float:
    if gradient is None:
        return 0.0
    return float(np.sqrt(np.dot(gradient, gradient)))
