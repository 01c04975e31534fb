## Offline datasets: behavior-policy generation, JSONL serialization and minibatch sampling.

import re
import json
import hashlib
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import List, Literal, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from config.config import Config
from qql import envs
from qql.errors import DatasetParseError, DomainError, PreconditionError, SchemaError, UnsupportedError
from qql.rng import make_stream
from utils.validators import RecordValidator

logger = logging.getLogger(__name__)

Action = Union[int, Tuple[float, ...]]


## One offline sample (s, a, r, s', terminal)
@dataclass(frozen=True)
class Transition:
    s: Tuple[float, ...]
    a: Action
    r: float
    s_next: Tuple[float, ...]
    terminal: bool


## Stacked arrays for a minibatch
@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return self.r.shape[0]


## Behavior policy used to roll out a dataset
class BehaviorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal['uniform-random', 'epsilon-optimal', 'gaussian-noisy-optimal']
    param: float = 0.0

    ## Epsilon is a probability, sigma is non-negative
    @field_validator('param')
    @classmethod
    def validate_param(cls, v):
        if v < 0:
            raise ValueError('Behavior parameter must be non-negative')
        return v

    def describe(self) -> str:
        if self.kind == 'uniform-random':
            return self.kind
        return f"{self.kind}({self.param:g})"


## Ordered, immutable sequence of transitions plus provenance
@dataclass(frozen=True)
class Dataset:
    env_id: str
    behavior: str
    seed: int
    transitions: Tuple[Transition, ...]

    @property
    def count(self) -> int:
        return len(self.transitions)

    ## All transitions stacked once for fast sampling
    @cached_property
    def arrays(self) -> Batch:
        return as_arrays(self.transitions)


## Parse "uniform-random", "epsilon-optimal(0.1)" or "gaussian-noisy-optimal(0.2)"
def parse_behavior(text: str) -> BehaviorSpec:
    match = re.fullmatch(r'\s*([a-z\-]+)\s*(?:\(\s*([0-9.eE+\-]+)\s*\))?\s*', text)
    if not match:
        raise ValueError(f"Cannot parse behavior '{text}'")
    kind, param = match.group(1), match.group(2)
    return BehaviorSpec(kind=kind, param=float(param) if param is not None else 0.0)


def as_arrays(transitions: Sequence[Transition]) -> Batch:
    if not transitions:
        raise DomainError('Cannot stack an empty batch')
    discrete = isinstance(transitions[0].a, int)
    return Batch(
        s=np.array([t.s for t in transitions], dtype=np.float64),
        a=np.array([t.a for t in transitions], dtype=np.int64 if discrete else np.float64),
        r=np.array([t.r for t in transitions], dtype=np.float64),
        s_next=np.array([t.s_next for t in transitions], dtype=np.float64),
        terminal=np.array([t.terminal for t in transitions], dtype=np.float64),
    )


def _behavior_action(env: envs.Env, behavior: BehaviorSpec, state, rng: np.random.Generator):
    if behavior.kind == 'uniform-random':
        if env.discrete:
            return int(rng.integers(0, env.n_actions))
        return rng.uniform(-1.0, 1.0, size=env.action_dim)

    if behavior.kind == 'epsilon-optimal':
        if rng.random() < behavior.param:
            return _behavior_action(env, BehaviorSpec(kind='uniform-random'), state, rng)
        return env.oracle_action(state)

    if env.discrete:
        raise UnsupportedError('gaussian-noisy-optimal needs a continuous action space')
    noisy = env.oracle_action(state) + behavior.param * rng.standard_normal(env.action_dim)
    return np.clip(noisy, -1.0, 1.0)


def _encode_action(env: envs.Env, action) -> Action:
    if env.discrete:
        return env.check_action(action)
    return tuple(float(x) for x in env.check_action(action))


## Roll out episodes under a behavior policy until n transitions are collected
def generate(env: envs.Env, behavior: Union[str, BehaviorSpec], n: int, seed: int) -> Dataset:
    behavior = parse_behavior(behavior) if isinstance(behavior, str) else behavior
    if n < 1:
        raise PreconditionError(f"Dataset size must be at least 1, got {n}")
    if behavior.kind != 'uniform-random' and not env.has_oracle:
        raise UnsupportedError(f"Behavior '{behavior.describe()}' needs an oracle, which {env.spec.id} lacks")
    if behavior.kind == 'gaussian-noisy-optimal' and env.discrete:
        raise UnsupportedError('gaussian-noisy-optimal needs a continuous action space')

    rng = make_stream(seed, 'data')
    transitions: List[Transition] = []
    episodes = 0
    while len(transitions) < n:
        state = env.reset(rng)
        episodes += 1
        terminal = False
        while not terminal and len(transitions) < n:
            obs = env.observe(state)
            action = _encode_action(env, _behavior_action(env, behavior, state, rng))
            state, reward, terminal = env.step(state, action, rng)
            transitions.append(Transition(
                s=tuple(float(x) for x in obs),
                a=action,
                r=float(reward),
                s_next=tuple(float(x) for x in env.observe(state)),
                terminal=bool(terminal),
            ))

    logger.info(f"Generated {n} transitions on {env.spec.id} with {behavior.describe()} over {episodes} episodes")
    return Dataset(env_id=env.spec.id, behavior=behavior.describe(), seed=seed, transitions=tuple(transitions))


def _fmt(x: float) -> str:
    # 17 significant digits round-trip any float64 exactly
    return format(float(x), '.17g')


def _encode_transition(t: Transition) -> str:
    a = str(t.a) if isinstance(t.a, int) else '[' + ', '.join(_fmt(x) for x in t.a) + ']'
    return (
        '{"s": [' + ', '.join(_fmt(x) for x in t.s) + '], '
        '"a": ' + a + ', '
        '"r": ' + _fmt(t.r) + ', '
        '"s_next": [' + ', '.join(_fmt(x) for x in t.s_next) + '], '
        '"terminal": ' + ('true' if t.terminal else 'false') + '}'
    )


## Write the dataset as JSON Lines plus a <name>.meta.json sidecar
def save(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for t in dataset.transitions:
            f.write(_encode_transition(t) + '\n')

    meta = {'env_id': dataset.env_id, 'behavior': dataset.behavior, 'seed': dataset.seed, 'count': dataset.count}
    meta_path = Config.meta_path_for(path)
    with open(meta_path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write('\n')

    logger.info(f"Dataset saved to {path} ({dataset.count} transitions)")
    return path


def _decode_transition(record: dict, discrete: bool) -> Transition:
    a = record['a']
    if discrete:
        if not isinstance(a, int) or isinstance(a, bool):
            raise ValueError('discrete action must be an integer index')
    else:
        if not isinstance(a, list):
            raise ValueError('continuous action must be a list')
        a = tuple(float(x) for x in a)
    return Transition(
        s=tuple(float(x) for x in record['s']),
        a=a,
        r=float(record['r']),
        s_next=tuple(float(x) for x in record['s_next']),
        terminal=bool(record['terminal']),
    )


## Read a JSONL dataset and its sidecar, checking every line against the schema and the env
def load(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    meta_path = Config.meta_path_for(path)
    try:
        with open(meta_path, 'r', encoding='utf-8') as f:
            meta = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Metadata {meta_path} is not valid JSON: {e}") from e
    errors = RecordValidator.validate_metadata(meta)
    if errors:
        raise SchemaError(f"Metadata {meta_path} is invalid: {errors[0]}")

    env = envs.make_env(meta['env_id'])
    transitions: List[Transition] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"malformed JSON ({e.msg})", line_number) from e
            errors = RecordValidator.validate_transition(record)
            if errors:
                raise DatasetParseError(errors[0], line_number)
            try:
                t = _decode_transition(record, env.discrete)
            except ValueError as e:
                raise DatasetParseError(str(e), line_number) from e
            if env.discrete and not 0 <= t.a < env.n_actions:
                raise DatasetParseError(f"action {t.a} outside [0, {env.n_actions}) for env '{env.spec.id}'", line_number)
            if len(t.s) != env.obs_dim or len(t.s_next) != env.obs_dim:
                raise SchemaError(f"line {line_number}: state dimension does not match env '{env.spec.id}'")
            if not env.discrete and len(t.a) != env.action_dim:
                raise SchemaError(f"line {line_number}: action dimension does not match env '{env.spec.id}'")
            transitions.append(t)

    if len(transitions) != meta['count']:
        raise SchemaError(f"Metadata count {meta['count']} does not match {len(transitions)} lines in {path}")

    logger.info(f"Dataset loaded from {path} ({len(transitions)} transitions)")
    return Dataset(env_id=meta['env_id'], behavior=meta['behavior'], seed=meta['seed'], transitions=tuple(transitions))


## Git-style blob SHA-1 of a file's bytes
def content_hash(path: Union[str, Path]) -> str:
    content = Path(path).read_bytes()
    digest = hashlib.sha1(b'blob ' + str(len(content)).encode('ascii') + b'\0')
    digest.update(content)
    return digest.hexdigest()


def _sample_indices(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    if dataset.count == 0:
        raise DomainError('Cannot sample from an empty dataset')
    if batch_size < 1:
        raise PreconditionError(f"Batch size must be at least 1, got {batch_size}")
    return rng.integers(0, dataset.count, size=batch_size)


## Uniform sample with replacement
def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> List[Transition]:
    return [dataset.transitions[i] for i in _sample_indices(dataset, batch_size, rng)]


## Same draw as sample_batch, returned as stacked arrays
def sample_batch_arrays(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Batch:
    idx = _sample_indices(dataset, batch_size, rng)
    full = dataset.arrays
    return Batch(s=full.s[idx], a=full.a[idx], r=full.r[idx], s_next=full.s_next[idx], terminal=full.terminal[idx])
