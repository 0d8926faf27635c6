"""Experiment configuration: versioned schema, file loading and overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os

import jsonschema
import yaml

from ..errors import ConfigError

SCHEMA_VERSION = 1
ENV_OUTPUT = "LEVYGLASS_OUTPUT_DIR"
ENV_WORKERS = "LEVYGLASS_WORKERS"

KINDS = ("sample", "diagnostics", "simulate", "escape", "autocorrelation", "wells", "yproc",
         "compare-skeleton", "exact-report", "fk-report")

_num = {"type": "number"}
_int = {"type": "integer"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "kind", "law"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "law": {
            "type": "object",
            "additionalProperties": False,
            "required": ["variant", "n"],
            "properties": {
                "variant": {"enum": ["pareto", "general", "planted"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "n": {"type": "integer", "minimum": 1},
                "planted": {"type": "array",
                            "items": {"type": "array", "minItems": 3, "maxItems": 3,
                                      "items": _num}},
                "base": {"enum": ["none", "pareto"]},
                "base_scale": _num,
                "survival_t": {"type": "array", "items": _num},
                "survival_p": {"type": "array", "items": _num},
            },
        },
        "regime": {
            "type": "object",
            "additionalProperties": False,
            "required": ["beta"],
            "properties": {
                "beta": {"type": "number", "minimum": 0},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "gamma": _num,
                "log_t": {"type": "number", "exclusiveMinimum": 0},
                "log_delta": {"type": "number", "exclusiveMaximum": 0},
                "rho": _num,
            },
        },
        "engine": {"enum": ["naive", "rejection-free"]},
        "samples": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 1},
                "n_seeds": {"type": "integer", "minimum": 1},
                "n_bootstrap": {"type": "integer", "minimum": 1},
                "duration": {"type": "number", "minimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "times_s": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "s": {"type": "number", "exclusiveMinimum": 1},
                "sizes": {"type": "array", "items": {"type": "integer", "minimum": 2}},
                "L": {"type": "integer", "minimum": 0},
                "surrogate": {"type": "boolean"},
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"matrix": _int, "run": _int},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "engine": "rejection-free",
    "regime": {"beta": 1.0, "gamma": 1.0, "log_delta": -10.0},
    "samples": {"n_paths": 1000, "n_seeds": 200, "n_bootstrap": 200, "duration": 1.0,
                "times_s": [1.0, 2.0], "s": 2.0, "sizes": [50, 100, 200, 400], "L": 0,
                "surrogate": False},
    "seeds": {"matrix": 0, "run": 0},
    "output": {"dir": "results", "prefix": ""},
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Validated experiment description; ``data`` is the canonical JSON object."""

    def __init__(self, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        merged = _merge(_merge(DEFAULTS, {"law": {"alpha": 0.5}}), data)
        try:
            jsonschema.validate(merged, SCHEMA)
        except jsonschema.ValidationError as exc:
            path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        self.data = merged
        self._check_semantics()

    def _check_semantics(self):
        law = self.data["law"]
        if law["variant"] == "general" and not (law.get("survival_t") and law.get("survival_p")):
            raise ConfigError("general law needs survival_t and survival_p")
        if law["variant"] == "planted":
            n = law["n"]
            for i, j, _ in law.get("planted", []):
                if not (0 <= i < n and 0 <= j < n and i != j and float(i).is_integer()
                        and float(j).is_integer()):
                    raise ConfigError(f"planted edge ({i}, {j}) out of range for n={n}")
        r = self.data["regime"]
        if "log_t" in r and "a" in r:
            raise ConfigError("give either regime.a or regime.log_t, not both")

    def __getitem__(self, key):
        return self.data[key]

    @property
    def kind(self):
        return self.data["kind"]

    def canonical(self):
        """Serialized form excluding the output location."""
        d = {k: v for k, v in self.data.items() if k != "output"}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def output_dir(self):
        return os.environ.get(ENV_OUTPUT) or self.data["output"]["dir"]

    def to_dict(self):
        return copy.deepcopy(self.data)


def parse_value(text):
    """Override values use YAML scalars/lists, so ``1e4``, ``[1, 2]`` and ``true`` work."""
    try:
        val = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {text!r}: {exc}") from None
    if isinstance(val, str):
        # YAML 1.1 reads "1e4" as a string
        try:
            f = float(val)
        except ValueError:
            return val
        return int(f) if f.is_integer() and "." not in val else f
    return val


def apply_overrides(data, overrides):
    """Apply ``dotted.key=value`` overrides in order."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = parse_value(val)
    return data


def load_config(path=None, overrides=(), data=None):
    """Read a JSON or YAML config file (or a dict) and validate it."""
    if data is None:
        if path is None:
            raise ConfigError("no config given")
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        try:
            data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
    data = apply_overrides(data, overrides)
    return ExperimentConfig(data)


def workers():
    """Worker count from the environment (default 1)."""
    raw = os.environ.get(ENV_WORKERS)
    if raw is None:
        return 1
    try:
        w = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
    if w < 1:
        raise ConfigError(f"{ENV_WORKERS} must be positive")
    return w
