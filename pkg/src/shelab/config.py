"""Run configuration: schema, defaults, overrides and hashing."""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

from .errors import DomainError

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_BOOL = {"type": "boolean"}
_STR = {"type": "string"}


def _section(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _section(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "model": _section({
            "drift": {"enum": ["zero", "sin", "cos", "tanh", "affine"]},
            "scale": _NUM,
            "b1": _NUM,
            "c": _NUM,
            "sigma": _NUM,
            "u0": {"enum": ["zero", "const", "cos", "sin", "bump"]},
            "u0_value": _NUM,
            "bc": {"enum": ["neumann", "dirichlet"]},
        }),
        "scheme": _section({
            "T": {"type": "number", "exclusiveMinimum": 0},
            "N": {"type": "integer", "minimum": 1},
            "K": {"type": "integer", "minimum": 1},
            "M": {"type": "integer", "minimum": 4},
            "ref_refinement": {"type": "integer", "minimum": 1},
            "strict": _BOOL,
        }),
        "study": _section({
            "kind": {"enum": ["weak", "density", "affine", "small_drift", "asymptotics", "kernel_checks"]},
            "x": {"type": "number", "minimum": 0, "maximum": 1},
            "N0": {"type": "integer", "minimum": 1},
            "levels": {"type": "integer", "minimum": 4},
            "steps": {"type": "array", "items": _INT, "minItems": 3},
            "paths": {"type": "integer", "minimum": 2},
            "test_function": _STR,
            "metric": {"enum": ["weak_error", "sup_density", "tv", "strong_l2"]},
            "epsilons": {"type": "array", "items": _NUM, "minItems": 3},
            "z": {"type": "array", "items": _NUM, "minItems": 1},
            "deltas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        }),
        "output": _section({
            "n_paths": {"type": "integer", "minimum": 1},
            "first_path": {"type": "integer", "minimum": 0},
            "noise_dump": _BOOL,
        }),
    },
    required=("schema_version", "seed"),
)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 20240501,
    "model": {"drift": "sin", "scale": 1.0, "b1": 0.0, "c": 0.0, "sigma": 1.0,
              "u0": "const", "u0_value": 1.0, "bc": "neumann"},
    "scheme": {"T": 1.0, "N": 64, "K": 63, "M": 128, "ref_refinement": 2, "strict": True},
    "study": {"kind": "weak", "x": 0.5, "N0": 8, "levels": 4, "paths": 200_000,
              "test_function": "tanh", "metric": "weak_error",
              "epsilons": [0.4, 0.2, 0.1, 0.05], "z": [1.0],
              "deltas": [1e-3, 1e-4, 1e-5, 1e-6],
              "steps": [16, 32, 64, 128, 256, 512, 1024]},
    "output": {"n_paths": 4, "first_path": 0, "noise_dump": False},
}


class ConfigError(DomainError):
    pass


def parse_override(arg):
    """``--section.key=value`` -> ``(section, key, value)``; value parsed as JSON if possible."""
    body = arg[2:] if arg.startswith("--") else arg
    if body.startswith("seed="):
        return "seed", None, _value(body[5:])
    if "=" not in body or "." not in body.split("=", 1)[0]:
        raise ConfigError(f"malformed override {arg!r}; expected --section.key=value")
    path, raw = body.split("=", 1)
    section, key = path.split(".", 1)
    return section, key, _value(raw)


def _value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def validate(doc):
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


def load(path=None, overrides=()):
    """Read a JSON config, apply overrides, validate and fill defaults."""
    doc = {"schema_version": SCHEMA_VERSION, "seed": DEFAULTS["seed"]}
    if path is not None:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    doc = copy.deepcopy(doc)
    for arg in overrides:
        section, key, value = parse_override(arg)
        if key is None:
            doc[section] = value
        elif not isinstance(doc.setdefault(section, {}), dict):
            raise ConfigError(f"{section} is not a section")
        else:
            doc[section][key] = value
    validate(doc)
    return normalize(doc)


def normalize(doc):
    out = copy.deepcopy(DEFAULTS)
    for section, value in doc.items():
        if isinstance(value, dict):
            out[section].update(value)
        else:
            out[section] = value
    validate(out)
    return out


def canonical(doc):
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc):
    """SHA-256 of the canonical JSON form; independent of key order."""
    return hashlib.sha256(canonical(doc).encode()).hexdigest()
