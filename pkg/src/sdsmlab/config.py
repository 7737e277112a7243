"""Experiment configuration: JSON schema, loading and object construction.

Every document is validated against :data:`SCHEMA` before anything is
computed.  Unknown keys are rejected and errors carry a JSON pointer to the
offending key.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .errors import ConfigError
from .kernels import KernelModel
from .measures import MeasureSpec, measure_from_dict
from .particle import SimConfig

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1, "maxItems": 3}
_POINTS = {"type": "array", "items": _VEC, "minItems": 1}
_BOUND = {"anyOf": [_NUM, {"enum": ["inf", "-inf"]}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_MODEL = _obj(
    {
        "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
        "h": _obj({"kind": {"enum": ["zero", "gaussian", "table"]}, "params": {"type": "object"}}, ["kind"]),
        "c": _obj({"kind": {"enum": ["identity", "constant"]}, "matrix": {"type": "array", "items": {"type": "array", "items": _NUM}}}, ["kind"]),
    },
    ["dimension"],
)

_MEASURE = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["lebesgue_window", "gaussian_mixture", "dirac", "ia_density"]},
        "lower": {"type": "array", "items": _BOUND, "minItems": 1, "maxItems": 3},
        "upper": {"type": "array", "items": _BOUND, "minItems": 1, "maxItems": 3},
        "scale": _POS,
        "weights": {"type": "array", "items": _POS, "minItems": 1},
        "centers": _POINTS,
        "bandwidths": {"type": "array", "items": _POS, "minItems": 1},
        "point": _VEC,
        "mass": _POS,
        "a": _NONNEG,
        "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
    },
    "required": ["kind"],
    "additionalProperties": False,
    "allOf": [
        {"if": {"properties": {"kind": {"const": "lebesgue_window"}}}, "then": {"required": ["lower", "upper"]}},
        {"if": {"properties": {"kind": {"const": "gaussian_mixture"}}}, "then": {"required": ["weights", "centers", "bandwidths"]}},
        {"if": {"properties": {"kind": {"const": "dirac"}}}, "then": {"required": ["point"]}},
        {"if": {"properties": {"kind": {"const": "ia_density"}}}, "then": {"required": ["a", "dimension"]}},
    ],
}

SCHEMA: dict = _obj(
    {
        "model": _MODEL,
        "initial_measure": _MEASURE,
        "particles": {"type": "integer", "minimum": 1},
        "dt": _POS,
        "horizon": _NONNEG,
        "gamma": _NONNEG,
        "sigma2": _NONNEG,
        "snapshots": {"type": "array", "items": _NONNEG},
        "waive_hypotheses": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0},
        "replicas": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
        "validate": _obj({"t": _POS, "a": _NONNEG}),
        "duality": _obj(
            {
                "m": {"enum": [1, 2]},
                "t": _NONNEG,
                "gamma_sigma2": _NONNEG,
                "f": _obj({"centers": _POINTS, "bandwidths": {"type": "array", "items": _POS, "minItems": 1}}, ["centers", "bandwidths"]),
                "replicas": {"type": "integer", "minimum": 1},
                "dual_replicas": {"type": "integer", "minimum": 1},
                "n_se": _POS,
            },
            ["m", "f"],
        ),
        "localtime": _obj(
            {
                "points": _POINTS,
                "lambdas": {"type": "array", "items": _POS, "minItems": 1},
                "eps": {"type": "array", "items": _POS},
                "record_every": {"type": "integer", "minimum": 1},
                "phi": _obj({"center": _VEC, "radius": _POS, "nodes": {"type": "integer", "minimum": 2}}, ["center", "radius"]),
                "n_se": _POS,
                "tolerance": _POS,
            },
            ["points"],
        ),
        "holder": _obj(
            {
                "n": {"type": "integer", "minimum": 1},
                "point": _VEC,
                "lag_steps": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 4},
                "start_time": _NONNEG,
                "space_lags": {"type": "array", "items": _POS, "minItems": 4},
                "direction": _VEC,
                "lambda": _POS,
                "estimator": {"enum": ["tanaka", "occupation"]},
                "eps": _POS,
                "shim_replicas": {"type": "integer", "minimum": 2},
            }
        ),
        "kernel_checks": _obj(
            {
                "trials": {"type": "integer", "minimum": 1},
                "sweep_trials": {"type": "integer", "minimum": 1},
                "lambda": _POS,
            }
        ),
    }
)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def validate_document(doc: Any) -> None:
    """Raise :class:`ConfigError` (with a JSON pointer) if ``doc`` violates the schema."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path.append(extra[0])
                raise ConfigError("unknown key", _pointer(path))
        if err.validator == "required" and isinstance(err.instance, dict):
            missing = [k for k in err.validator_value if k not in err.instance]
            if missing:
                path.append(missing[0])
                raise ConfigError("missing required key", _pointer(path))
        raise ConfigError(err.message, _pointer(path) or "/")


def _rebase(exc: ConfigError, prefix: str) -> ConfigError:
    ptr = exc.pointer if exc.pointer.startswith(prefix) else prefix + exc.pointer
    msg = str(exc).split(": ", 1)[1] if exc.pointer else str(exc)
    return ConfigError(msg, ptr)


@dataclass
class ExperimentConfig:
    """A validated experiment document plus command-line overrides."""

    doc: dict
    seed: int = 0
    replicas: int = 1
    out: str = "sdsm_out"

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], seed: int | None = None, replicas: int | None = None, out: str | None = None) -> ExperimentConfig:
        validate_document(doc)
        doc = copy.deepcopy(dict(doc))
        return cls(
            doc,
            int(seed if seed is not None else doc.get("seed", 0)),
            int(replicas if replicas is not None else doc.get("replicas", 1)),
            str(out if out is not None else doc.get("out", "sdsm_out")),
        )

    @classmethod
    def load(cls, path, **overrides) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc, **overrides)

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    def require(self, *keys: str) -> None:
        for k in keys:
            if k not in self.doc:
                raise ConfigError("required for this command", f"/{k}")

    def model(self) -> KernelModel:
        self.require("model")
        try:
            return KernelModel.from_dict(self.doc["model"])
        except ConfigError as exc:
            raise _rebase(exc, "/model") from None

    def initial_measure(self) -> MeasureSpec:
        self.require("initial_measure")
        try:
            return measure_from_dict(self.doc["initial_measure"])
        except ConfigError as exc:
            raise _rebase(exc, "/initial_measure") from None

    def sim_config(self, **overrides) -> SimConfig:
        self.require("model", "initial_measure", "particles", "dt", "horizon")
        d = self.doc
        kw = dict(
            model=self.model(),
            initial_measure=self.initial_measure(),
            particles=int(d["particles"]),
            dt=float(d["dt"]),
            horizon=float(d["horizon"]),
            gamma=float(d.get("gamma", 1.0)),
            sigma2=float(d.get("sigma2", 1.0)),
            snapshots=tuple(d.get("snapshots", ())),
            seed=self.seed,
            waive_hypotheses=bool(d.get("waive_hypotheses", False)),
        )
        kw.update(overrides)
        return SimConfig(**kw)

    def config_hash(self) -> str:
        blob = json.dumps({"doc": self.doc, "seed": self.seed, "replicas": self.replicas}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]
