"""Flat ``key = value`` run configuration.

Recognized keys (defaults in parentheses)::

    epochs (20)  lr (1e-5)  layers (4)  heads (8)  hidden_dim (512)
    layer_kind (gatv2)  seed (0)  selection (loss)  horizon (daily)
    split.test_year (2019)  split.val_fraction (0.2)
    provider.mode (pseudo)  provider.dim (768)  provider.seed (0)
    provider.archive ()

Blank lines and ``#`` comments are ignored.  The ``FLAG_SEED`` environment
variable, when set, overrides ``seed``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from flag.model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    epochs: int = 20
    lr: float = 1e-5
    layers: int = 4
    heads: int = 8
    hidden_dim: int = 512
    layer_kind: str = "gatv2"
    seed: int = 0
    selection: str = "loss"
    horizon: str = "daily"
    split_test_year: int = 2019
    split_val_fraction: float = 0.2
    provider_mode: str = "pseudo"
    provider_dim: int = 768
    provider_seed: int = 0
    provider_archive: str = ""

    def model_config(self, dtype="float32"):
        return ModelConfig(
            n_layers=self.layers, n_heads=self.heads, hidden_dim=self.hidden_dim,
            input_dim=self.provider_dim, layer_kind=self.layer_kind, seed=self.seed, dtype=dtype,
        )

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 < self.split_val_fraction < 1.0:
            raise ConfigError("split.val_fraction must lie in (0, 1)")
        if self.selection not in ("loss", "error"):
            raise ConfigError("selection must be 'loss' or 'error'")
        if self.horizon not in ("daily", "weekly"):
            raise ConfigError("horizon must be 'daily' or 'weekly'")
        if self.provider_mode not in ("pseudo", "file"):
            raise ConfigError("provider.mode must be 'pseudo' or 'file'")
        if self.provider_mode == "file" and not self.provider_archive:
            raise ConfigError("provider.mode = file needs provider.archive")
        self.model_config()
        return self

    def to_text(self):
        return "".join(f"{_key(f.name)} = {getattr(self, f.name)}\n" for f in fields(self))


def _key(name):
    for prefix in ("split_", "provider_"):
        if name.startswith(prefix):
            return prefix[:-1] + "." + name[len(prefix):]
    return name


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(text, env=None) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        name = key.replace(".", "_")
        if name not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[name] = _convert(name, value, lineno)
    env = os.environ if env is None else env
    if env.get("FLAG_SEED"):
        values["seed"] = _convert("seed", env["FLAG_SEED"], "FLAG_SEED")
    return RunConfig(**values).validate()


def _convert(name, value, where):
    kind = _TYPES[name]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: {name} expects {kind}, got {value!r}") from None
    return value


def load_config(path=None, env=None) -> RunConfig:
    if path is None:
        return parse_config("", env)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), env)
