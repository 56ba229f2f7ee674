"""Flat ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored; values may be quoted. Keys
may be dotted (``beta.Cost_all_mode = -2e-4``) to address table entries.
"""
from __future__ import annotations

import dataclasses
import os
import typing

import numpy as np

from .errors import ConfigError


def read_kv_file(path) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            out[key] = value
    return out


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def coerce(value: str, annotation):
    """Convert a text value to the type named by a dataclass annotation."""
    if isinstance(annotation, str):
        annotation = {"int": int, "float": float, "str": str, "bool": bool}.get(annotation, annotation)
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        if value.lower() in ("", "none", "null"):
            return None
        inner = [a for a in args if a is not type(None)]
        return coerce(value, inner[0])
    try:
        if annotation is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if annotation is int:
            f = float(value)
            if not f.is_integer():
                raise ValueError(value)
            return int(f)
        if annotation is float:
            return float(value)
        if origin is tuple:
            parts = [p.strip() for p in value.split(",") if p.strip()]
            typ = args[0] if args else float
            return tuple(coerce(p, typ) for p in parts)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {getattr(annotation, '__name__', annotation)}") from None
    return value


def apply_mapping(obj, mapping: dict[str, str], prefix: str = ""):
    """Return a copy of dataclass ``obj`` with scalar fields set from ``mapping``."""
    hints = typing.get_type_hints(type(obj))
    changes = {}
    for f in dataclasses.fields(obj):
        key = prefix + f.name
        if key in mapping:
            changes[f.name] = coerce(mapping[key], hints[f.name])
    return dataclasses.replace(obj, **changes)


def derive_seed(seed: int, stage: str) -> int:
    """Per-stage seed: ``SeedSequence([seed, STAGE_COUNTER[stage]])``.

    Stages are numbered in pipeline order so adding a stage at the end
    keeps earlier stage seeds unchanged.
    """
    if stage not in STAGE_COUNTER:
        raise KeyError(f"unknown pipeline stage {stage!r}")
    return int(np.random.SeedSequence([int(seed), STAGE_COUNTER[stage]]).generate_state(1)[0])


STAGE_COUNTER = {"generate": 0, "resample": 1, "gbdt": 2}
