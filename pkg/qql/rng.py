## Named random sub-streams derived from one master seed.

import logging
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)


# Stream indices are fixed; new streams take new numbers
STREAM_INDEX: Dict[str, int] = {
    'init': 0,
    'batch': 1,
    'policy': 2,
    'eval': 3,
    'data': 4,
    'noise': 5,
    'env': 6,
    'actions': 7,
    'network': 8,
    'seeds': 9,
}


## Create the generator for a named purpose under a master seed
def make_stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAM_INDEX:
        raise KeyError(f"Unknown random stream '{name}'; known: {sorted(STREAM_INDEX)}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAM_INDEX[name],))
    logger.debug(f"Derived stream '{name}' from seed {seed}")
    return np.random.Generator(np.random.PCG64(seq))


## Generator for an integer sub-index under a named stream (layers, seeds, episodes)
def make_indexed_stream(seed: int, name: str, index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAM_INDEX[name], int(index)))
    return np.random.Generator(np.random.PCG64(seq))


## JSON-serialisable snapshot of a generator's state
def get_state(gen: np.random.Generator) -> Dict[str, Any]:
    state = gen.bit_generator.state
    return {
        'bit_generator': state['bit_generator'],
        'state': {'state': int(state['state']['state']), 'inc': int(state['state']['inc'])},
        'has_uint32': int(state['has_uint32']),
        'uinteger': int(state['uinteger']),
    }


## Restore a generator from a snapshot produced by get_state
def set_state(gen: np.random.Generator, state: Dict[str, Any]) -> None:
    gen.bit_generator.state = {
        'bit_generator': state['bit_generator'],
        'state': {'state': int(state['state']['state']), 'inc': int(state['state']['inc'])},
        'has_uint32': int(state['has_uint32']),
        'uinteger': int(state['uinteger']),
    }


## New generator positioned at a stored state
def from_state(state: Dict[str, Any]) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64(0))
    set_state(gen, state)
    return gen


## Integer seed for the index-th member of a named family (e.g. one per network)
def derive_seed(seed: int, name: str, index: int) -> int:
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAM_INDEX[name], int(index)))
    return int(seq.generate_state(1, dtype=np.uint32)[0])
