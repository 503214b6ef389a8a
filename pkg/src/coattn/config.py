"""Flat ``key = value`` run configuration.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys and repeated
keys are errors. Values given on the command line override file values.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from coattn.cascade import CascadeConfig
from coattn.errors import ConfigurationError
from coattn.objective import LossConfig
from coattn.trainer import TrainConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else int(s)


# key -> (parser, default)
SCHEMA = {
    "bundle": (str, None),
    "pairs": (str, None),
    "out": (str, None),
    "log": (str, None),
    "variant": (str, "iterating"),
    "depth": (int, 5),
    "heads": (int, 4),
    "joint_dim": (_opt_int, None),
    "residual": (_bool, True),
    "temperature": (float, 0.07),
    "lambda": (float, 0.5),
    "denominator": (str, "literal_exclude_positive"),
    "batch_size": (int, 32),
    "epochs": (int, 50),
    "learning_rate": (float, 1e-3),
    "seed": (int, 0),
    "optimizer": (str, "adam"),
}

DEFAULTS = {k: v[1] for k, v in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values: dict = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigurationError(f"{source}:{n}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{n}: key {key!r} given twice")
        try:
            values[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{n}: bad value for {key}: {exc}") from exc
    return values


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def dump_config(values: dict) -> str:
    return "".join(f"{k} = {'' if values[k] is None else values[k]}\n" for k in SCHEMA if k in values)


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    bundle: str | None
    pairs: str | None
    out: str | None
    log: str | None


def resolve(file_values: dict, overrides: dict, dim: int) -> RunConfig:
    """Merge defaults, file values and non-None overrides into a RunConfig."""
    v = dict(DEFAULTS)
    v.update(file_values)
    v.update({k: x for k, x in overrides.items() if x is not None})
    unknown = set(v) - set(SCHEMA)
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    cascade = CascadeConfig(v["variant"], v["depth"], dim, v["heads"], v["residual"])
    loss = LossConfig(v["temperature"], v["lambda"], v["denominator"])
    cfg = TrainConfig(v["batch_size"], v["epochs"], v["learning_rate"], v["seed"], cascade, loss,
                      v["optimizer"], v["joint_dim"])
    return RunConfig(cfg, v["bundle"], v["pairs"], v["out"], v["log"])
