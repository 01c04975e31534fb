## Validation module for stored documents and numeric results.

import logging
from typing import Any, Dict, List

import numpy as np
from jsonschema import Draft7Validator

logger = logging.getLogger(__name__)


_REAL_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 1}


## JSON-Schema validation of every document the toolkit writes to disk
class RecordValidator:

    # One dataset line
    TRANSITION_SCHEMA = {
        "type": "object",
        "properties": {
            "s": _REAL_VECTOR,
            "a": {"anyOf": [{"type": "integer", "minimum": 0}, _REAL_VECTOR]},
            "r": {"type": "number"},
            "s_next": _REAL_VECTOR,
            "terminal": {"type": "boolean"},
        },
        "required": ["s", "a", "r", "s_next", "terminal"],
        "additionalProperties": False,
    }

    # Dataset sidecar <name>.meta.json
    METADATA_SCHEMA = {
        "type": "object",
        "properties": {
            "env_id": {"enum": ["grid5", "pointmass", "gumbel-bandit"]},
            "behavior": {"type": "string", "minLength": 1},
            "seed": {"type": "integer"},
            "count": {"type": "integer", "minimum": 1},
        },
        "required": ["env_id", "behavior", "seed", "count"],
        "additionalProperties": False,
    }

    _MLP_SPEC = {
        "type": "object",
        "properties": {
            "input_dim": {"type": "integer", "minimum": 1},
            "hidden_dims": {"type": "array", "items": {"type": "integer", "minimum": 1}},
            "output_dim": {"type": "integer", "minimum": 1},
            "activation": {"enum": ["relu"]},
        },
        "required": ["input_dim", "hidden_dims", "output_dim"],
    }

    _OPTIMIZER = {
        "type": "object",
        "properties": {
            "m": {"type": "array", "items": {"type": "number"}},
            "v": {"type": "array", "items": {"type": "number"}},
            "step": {"type": "integer", "minimum": 0},
            "lr": {"type": "number", "exclusiveMinimum": 0},
            "beta1": {"type": "number"},
            "beta2": {"type": "number"},
            "eps": {"type": "number"},
        },
        "required": ["m", "v", "step", "lr", "beta1", "beta2", "eps"],
    }

    # Agent checkpoint ckpt_*.json
    CHECKPOINT_SCHEMA = {
        "type": "object",
        "properties": {
            "format": {"const": "qql-checkpoint/1"},
            "env_id": {"enum": ["grid5", "pointmass", "gumbel-bandit"]},
            "algo": {"enum": ["qql", "xql", "bc"]},
            "specs": {"type": "object", "additionalProperties": _MLP_SPEC},
            "params": {"type": "object", "additionalProperties": {"type": "array", "items": {"type": "number"}}},
            "optimizers": {"type": "object", "additionalProperties": _OPTIMIZER},
            "step": {"type": "integer", "minimum": 0},
            "rng": {"type": "object"},
            "config": {"type": "object"},
            "flags": {"type": "object"},
        },
        "required": ["format", "env_id", "algo", "specs", "params", "optimizers", "step", "rng"],
    }

    # Run manifest.json
    MANIFEST_SCHEMA = {
        "type": "object",
        "properties": {
            "algo": {"enum": ["qql", "xql", "bc"]},
            "env_id": {"type": "string"},
            "seed": {"type": "integer"},
            "config": {"type": "object"},
            "flags": {"type": "object"},
            "dataset_hash": {"type": ["string", "null"]},
            "resumed_from": {"type": ["string", "null"]},
        },
        "required": ["algo", "env_id", "seed", "config", "flags", "dataset_hash"],
    }

    # references.json
    REFERENCES_SCHEMA = {
        "type": "object",
        "additionalProperties": {
            "type": "object",
            "properties": {
                "random_return": {"type": "number"},
                "expert_return": {"type": "number"},
                "episodes": {"type": "integer", "minimum": 1},
            },
            "required": ["random_return", "expert_return"],
        },
    }

    ## Validate an instance against a schema; returns the error messages
    @classmethod
    def _validate(cls, instance: Any, schema: Dict[str, Any], label: str) -> List[str]:
        errors = [
            f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in sorted(Draft7Validator(schema).iter_errors(instance), key=lambda e: list(e.absolute_path))
        ]
        if errors:
            logger.warning(f"{label} validation failed: {errors[0]}")
        else:
            logger.debug(f"{label} validation passed")
        return errors

    @classmethod
    def validate_transition(cls, record: Any) -> List[str]:
        return cls._validate(record, cls.TRANSITION_SCHEMA, 'Transition')

    @classmethod
    def validate_metadata(cls, meta: Any) -> List[str]:
        return cls._validate(meta, cls.METADATA_SCHEMA, 'Dataset metadata')

    @classmethod
    def validate_checkpoint(cls, document: Any) -> List[str]:
        return cls._validate(document, cls.CHECKPOINT_SCHEMA, 'Checkpoint')

    @classmethod
    def validate_manifest(cls, document: Any) -> List[str]:
        return cls._validate(document, cls.MANIFEST_SCHEMA, 'Manifest')

    @classmethod
    def validate_references(cls, document: Any) -> List[str]:
        return cls._validate(document, cls.REFERENCES_SCHEMA, 'References')


## Static methods for common numeric assertions
class ResultAsserter:

    ## Assert that every entry of an array is finite
    @staticmethod
    def assert_all_finite(values, label: str = "values"):
        arr = np.asarray(values, dtype=np.float64)
        assert np.all(np.isfinite(arr)), f"{label} contains non-finite entries"

    ## Assert agreement with a reference within an absolute tolerance
    @staticmethod
    def assert_close(actual, expected, tol: float, label: str = "value"):
        diff = float(np.max(np.abs(np.asarray(actual, dtype=np.float64) - np.asarray(expected, dtype=np.float64))))
        assert diff <= tol, f"{label} differs from the reference by {diff:.3g} (tolerance {tol:.3g})"

    ## Assert that an analytic gradient matches central finite differences
    @staticmethod
    def assert_gradient_matches(analytic, numeric, rel_tol: float = 1e-4, abs_floor: float = 1e-8):
        a = np.asarray(analytic, dtype=np.float64)
        n = np.asarray(numeric, dtype=np.float64)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), abs_floor)
        worst = int(np.argmax(rel))
        assert rel[worst] < rel_tol, \
            f"Gradient mismatch at coordinate {worst}: analytic {a[worst]:.6g}, numeric {n[worst]:.6g}"
