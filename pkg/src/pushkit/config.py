"""Configuration file handling and deterministic seed derivation.

Configs are INI files with a fixed schema: every key is declared below with
its type and default, unknown sections or keys are hard errors, and the whole
file is validated before any command starts working.  The resolved
configuration (defaults included) is hashed; the 16-hex-digit hash is stamped
into every output artifact so mixed-provenance inputs can be detected.

The single [run] seed fans out to per-component generators through
SeedSequence keyed on a component code plus optional indices, so parallel
collection and repeated runs stay reproducible.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np

from .control import ControllerConfig
from .model import TrainConfig
from .policy import PolicyTrainConfig
from .sim import SimConfig


class ConfigError(ValueError):
    """Invalid configuration file content."""


# component codes for seed derivation (documented, never reordered)
SEED_DATASET = 1
SEED_MODEL = 2
SEED_POLICY = 3
SEED_PUSH = 4
SEED_SWEEP = 5
SEED_EVAL = 6

_FIXTURE_NAMES = ("A", "B", "C", "D", "E", "P")

# (type, default); types: int, float, str, bool
SCHEMA: Dict[str, Dict[str, Tuple[type, object]]] = {
    "run": {
        "seed": (int, 0),
    },
    "sim": {
        "workspace_half": (float, 0.5),
        "max_step": (float, 0.0075),
        "max_substep": (float, 0.0005),
        "contact_tol": (float, 1e-9),
        "mu_contact": (float, 0.3),
    },
    "dataset": {
        "objects": (int, 300),
        "episodes_per_object": (int, 10),
        "max_steps": (int, 60),
    },
    "model": {
        "history": (int, 4),
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "dropout": (float, 0.5),
        "batch_size": (int, 64),
        "max_steps": (int, 3000),
    },
    "control": {
        "n_rollouts": (int, 1024),
        "horizon": (int, 5),
        "history": (int, 4),
        "temperature": (float, 0.1),
        "noise_sigma": (float, 0.002),
        "push_magnitude": (float, 0.005),
        "max_steps": (int, 60),
    },
    "policy": {
        "episodes": (int, 1500),
        "max_steps": (int, 60),
        "opt_steps": (int, 40),
        "batch_size": (int, 128),
        "gamma": (float, 0.98),
        "tau": (float, 0.005),
        "actor_lr": (float, 1e-3),
        "critic_lr": (float, 1e-3),
        "k_future": (int, 4),
        "explore_eps": (float, 0.3),
        "explore_sigma": (float, 0.2),
        "warmup_episodes": (int, 10),
        "replay_capacity": (int, 1_000_000),
        "push_magnitude": (float, 0.005),
    },
    "eval": {
        "objects": (str, "A,B,C,D,E"),
        "episodes_per_object": (int, 20),
    },
    "push": {
        "object": (str, "C"),
    },
}


def _parse_value(section: str, key: str, raw: str, typ: type):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}")


@dataclass(frozen=True)
class Config:
    """Fully resolved configuration with typed accessors per component."""

    values: Mapping[str, Mapping[str, object]]

    def __getitem__(self, section: str) -> Mapping[str, object]:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def hash(self) -> str:
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                v = self.values[section][key]
                rendered = repr(float(v)) if isinstance(v, float) else repr(v)
                lines.append(f"{section}.{key}={rendered}")
        digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
        return digest[:16]

    def sim_config(self) -> SimConfig:
        s = self.values["sim"]
        return SimConfig(workspace_half=s["workspace_half"], max_step=s["max_step"],
                         max_substep=s["max_substep"], contact_tol=s["contact_tol"],
                         mu_contact=s["mu_contact"])

    def train_config(self, seed: int) -> TrainConfig:
        m = self.values["model"]
        return TrainConfig(learning_rate=m["learning_rate"], beta1=m["beta1"],
                           beta2=m["beta2"], eps=m["eps"], dropout=m["dropout"],
                           batch_size=m["batch_size"], max_steps=m["max_steps"],
                           seed=seed)

    def controller_config(self) -> ControllerConfig:
        c = self.values["control"]
        return ControllerConfig(n_rollouts=c["n_rollouts"], horizon=c["horizon"],
                                history=c["history"], temperature=c["temperature"],
                                noise_sigma=c["noise_sigma"],
                                push_magnitude=c["push_magnitude"],
                                max_steps=c["max_steps"])

    def policy_config(self, seed: int) -> PolicyTrainConfig:
        p = self.values["policy"]
        return PolicyTrainConfig(episodes=p["episodes"], max_steps=p["max_steps"],
                                 opt_steps=p["opt_steps"], batch_size=p["batch_size"],
                                 gamma=p["gamma"], tau=p["tau"],
                                 actor_lr=p["actor_lr"], critic_lr=p["critic_lr"],
                                 k_future=p["k_future"], explore_eps=p["explore_eps"],
                                 explore_sigma=p["explore_sigma"],
                                 warmup_episodes=p["warmup_episodes"],
                                 replay_capacity=p["replay_capacity"],
                                 push_magnitude=p["push_magnitude"], seed=seed)

    def eval_objects(self) -> Tuple[str, ...]:
        raw = self.values["eval"]["objects"]
        names = tuple(n.strip() for n in raw.split(",") if n.strip())
        if not names:
            raise ConfigError("[eval] objects: empty object list")
        for n in names:
            if n not in _FIXTURE_NAMES:
                raise ConfigError(f"[eval] objects: unknown fixture {n!r}")
        return names

    def push_object(self) -> str:
        name = self.values["push"]["object"]
        if name not in _FIXTURE_NAMES:
            raise ConfigError(f"[push] object: unknown fixture {name!r}")
        return name


def default_config() -> Config:
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    return Config(values)


def load_config(path=None, seed_override=None) -> Config:
    """Parse and fully validate an INI config; path None gives pure defaults."""
    values = {sec: dict({k: d for k, (_, d) in keys.items()}) for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="!none!")
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                typ = SCHEMA[section][key][0]
                values[section][key] = _parse_value(section, key, raw, typ)
    if seed_override is not None:
        values["run"]["seed"] = int(seed_override)
    cfg = Config(values)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    # constructing the typed sub-configs runs their invariant checks
    try:
        cfg.sim_config()
        cfg.train_config(0)
        cfg.controller_config()
        cfg.policy_config(0)
        cfg.eval_objects()
        cfg.push_object()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))
    if cfg.seed < 0:
        raise ConfigError("[run] seed must be >= 0")
    d = cfg["dataset"]
    if d["objects"] < 1 or d["episodes_per_object"] < 1 or d["max_steps"] < 2:
        raise ConfigError("[dataset] objects, episodes_per_object must be >= 1 "
                          "and max_steps >= 2")
    m = cfg["model"]
    if m["history"] < 1:
        raise ConfigError("[model] history must be >= 1")
    e = cfg["eval"]
    if e["episodes_per_object"] < 1:
        raise ConfigError("[eval] episodes_per_object must be >= 1")


def derive_seed(global_seed: int, component: int, *indices: int) -> np.random.SeedSequence:
    """Stable per-component seed material; identical inputs, identical stream."""
    return np.random.SeedSequence((global_seed, component) + tuple(indices))


def component_rng(global_seed: int, component: int, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, component, *indices))
