"""Flat ``key = value`` configuration files.

One key per line, ``#`` starts a comment, keys namespaced with dots
(``model.filters``, ``train.epochs``, ``aug.hflip_p``).  Tuples are
comma-separated.  The same text format embeds the model configuration in
checkpoints.
"""

from __future__ import annotations

from dataclasses import fields

from .data import AugmentConfig
from .errors import ConfigError
from .model import ModelConfig


def parse_flat(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_flat(mapping):
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _convert(raw, like):
    if isinstance(like, bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0"):
            raise ConfigError(f"expected boolean, got {raw!r}")
        return low in ("true", "1")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        elem = like[0] if like else 0
        if isinstance(elem, int):
            return tuple(int(p) for p in parts)
        if isinstance(elem, float):
            return tuple(float(p) for p in parts)
        return tuple(parts)
    return raw


def fill_dataclass(cls, defaults, flat, prefix):
    """kwargs for ``cls`` from every ``prefix.field`` present in ``flat``."""
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key in flat:
            kwargs[f.name] = _convert(flat[key], getattr(defaults, f.name))
    return kwargs


def model_config_from_flat(flat):
    base = ModelConfig()
    cfg = ModelConfig(**fill_dataclass(ModelConfig, base, flat, "model"))
    return cfg.validate()


def model_config_to_flat(cfg):
    out = {}
    for f in fields(ModelConfig):
        out[f"model.{f.name}"] = getattr(cfg, f.name)
    return out


def augment_config_from_flat(flat):
    base = AugmentConfig()
    cfg = AugmentConfig(**fill_dataclass(AugmentConfig, base, flat, "aug"))
    return cfg.validate()


def unknown_keys(flat, prefixes=("model", "train", "aug")):
    bad = []
    for key in flat:
        head = key.split(".", 1)[0]
        if head not in prefixes:
            bad.append(key)
    return bad
