"""TOML run configuration with strict keys.

Sections ``[flow]``, ``[swarm]``, ``[env]``, ``[ppo]`` and ``[run]`` map onto
the dataclasses of the corresponding modules; anything omitted keeps its
default, and an empty file gives the reference configuration.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .env import EnvConfig, FlowConfig
from .exceptions import ParseError, ValidationError
from .ppo import PPOConfig
from .swarm import SwarmConfig


@dataclass(frozen=True)
class RunSettings:
    run_name: str = "default"
    output_dir: str = "runs"
    snapshot_every: int = 0
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def run_dir(self):
        return Path(self.run.output_dir) / self.run.run_name

    def validate(self):
        self.env.validate()
        self.ppo.validate()
        if self.run.snapshot_every < 0:
            raise ValidationError("snapshot_every must be non-negative")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.run.run_name):
            raise ValidationError(f"run_name {self.run.run_name!r} is not a plain directory name")
        return self

    def replace(self, section, **changes):
        """Copy with fields of one section replaced (``flow`` and ``swarm`` live inside ``env``)."""
        if section in ("flow", "swarm"):
            inner = dataclasses.replace(getattr(self.env, section), **changes)
            return dataclasses.replace(self, env=dataclasses.replace(self.env, **{section: inner}))
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def to_dict(self):
        env = {f.name: getattr(self.env, f.name) for f in dataclasses.fields(EnvConfig)
               if f.name not in ("flow", "swarm")}
        out = {"flow": dataclasses.asdict(self.env.flow), "swarm": dataclasses.asdict(self.env.swarm),
               "env": env, "ppo": dataclasses.asdict(self.ppo), "run": dataclasses.asdict(self.run)}
        out["flow"]["phases"] = [list(p) for p in self.env.flow.phases]
        if out["swarm"]["depth"] is None:
            del out["swarm"]["depth"]
        return out


SECTIONS = {"flow": FlowConfig, "swarm": SwarmConfig, "env": EnvConfig, "ppo": PPOConfig, "run": RunSettings}


def _line_of(text, key):
    pat = re.compile(rf"^\s*(\[\s*{re.escape(key)}\s*\]|\"?{re.escape(key)}\"?\s*=)", re.M)
    m = pat.search(text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _coerce(section, name, value, default, text):
    def bad(expected):
        line = _line_of(text, name)
        where = f" (line {line})" if line else ""
        raise ParseError(f"[{section}] {name}: expected {expected}, got {value!r}{where}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            bad("a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an integer")
        return value
    if isinstance(default, float) or (default is None and name == "depth"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad("a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            bad("a string")
        return value
    if name == "phases":
        try:
            phases = tuple((float(d), float(v)) for d, v in value)
        except (TypeError, ValueError):
            bad("a list of [duration, velocity] pairs")
        if not phases:
            bad("at least one phase")
        return phases
    return value


def config_from_dict(data, text=""):
    """Build a :class:`RunConfig` from parsed TOML, rejecting unknown keys."""
    parts = {}
    for section, values in data.items():
        if section not in SECTIONS:
            line = _line_of(text, section)
            raise ParseError(f"unknown section [{section}]" + (f" (line {line})" if line else ""))
        if not isinstance(values, dict):
            raise ParseError(f"{section} must be a table")
        cls = SECTIONS[section]
        defaults = cls()
        names = {f.name for f in dataclasses.fields(cls)} - {"flow", "swarm"}
        kwargs = {}
        for name, value in values.items():
            if name not in names:
                line = _line_of(text, name)
                raise ParseError(f"unknown key {name!r} in [{section}]" + (f" (line {line})" if line else ""))
            kwargs[name] = _coerce(section, name, value, getattr(defaults, name), text)
        parts[section] = cls(**kwargs)
    env = parts.get("env", EnvConfig())
    env = dataclasses.replace(env, flow=parts.get("flow", FlowConfig()), swarm=parts.get("swarm", SwarmConfig()))
    return RunConfig(env=env, ppo=parts.get("ppo", PPOConfig()), run=parts.get("run", RunSettings()))


def loads_config(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}") from None
    return config_from_dict(data, text).validate()


def load_config(path):
    """Parse and validate a TOML file; raises ParseError or ValidationError."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return loads_config(text)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def dumps_config(cfg: RunConfig):
    return tomli_w.dumps(cfg.to_dict())


def save_config(cfg: RunConfig, path):
    Path(path).write_text(dumps_config(cfg))
