"""Run configuration (INI-style key = value with sections) and manifest."""

from __future__ import annotations

import configparser
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

from .engine import ConflictConfig, RetentionPolicy, TrainBudget

TOOL_VERSION = "0.1.0"


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "run": {
        "benchmark": ("str", "permuted", ("permuted", "split", "synthetic")),
        "task_count": ("int", 3, None),
        "arch": ("str", "auto", ("auto", "mlp", "convnet", "synth")),
        "mode": ("str", "single", ("single", "grid", "nsga2", "random-ablation")),
        "delta": ("float", 0.5, None),
        "delta_grid": ("str", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0", None),
        "seed": ("int", 0, None),
        "train_limit": ("int", 5000, None),
        "data_dir": ("str", "", None),
        "fixed_binds": ("bool", True, None),
    },
    "budget": {
        "epochs": ("int", 3, None),
        "batch_size": ("int", 16, None),
        "base_lr": ("float", 0.15, None),
        "final_lr_frac": ("float", 0.05, None),
    },
    "retention": {
        "policy": ("str", "slow_lr", ("freeze", "slow_lr", "fine_tune")),
        "factor": ("float", 0.1, None),
    },
    "conflict": {
        "norm": ("str", "l2", ("l2", "l1")),
        "sample_cap": ("int", 256, None),
        "reference": ("str", "joint", ("joint", "independent")),
    },
    "search": {
        "population": ("int", 8, None),
        "budget": ("int", 20, None),
        "grid_step": ("float", 0.05, None),
        "ablation_seeds": ("int", 5, None),
    },
    "synthetic": {
        "clusters": ("int", 2, None),
        "dim": ("int", 8, None),
        "angles_deg": ("str", "0,90,0", None),
        "samples_per_task": ("int", 1200, None),
        "noise": ("float", 0.35, None),
    },
}


@dataclass
class RunConfig:
    values: dict  # section -> key -> parsed value

    def __getitem__(self, section_key):
        section, key = section_key
        return self.values[section][key]

    def semantic_dict(self) -> dict:
        # data_dir affects inputs only through file content, keep it out of the hash
        out = {s: dict(kv) for s, kv in self.values.items()}
        out["run"].pop("data_dir", None)
        return out

    def hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def budget(self) -> TrainBudget:
        b = self.values["budget"]
        return TrainBudget(b["epochs"], b["batch_size"], b["base_lr"], self.values["run"]["seed"], b["final_lr_frac"])

    def policy(self) -> RetentionPolicy:
        r = self.values["retention"]
        return RetentionPolicy(r["policy"], r["factor"])

    def conflict(self) -> ConflictConfig:
        c = self.values["conflict"]
        return ConflictConfig(c["norm"], c["sample_cap"], c["reference"])

    def delta_grid(self) -> list[float]:
        return [float(x) for x in self.values["run"]["delta_grid"].split(",") if x.strip()]

    def synthetic_angles(self) -> list[float]:
        return [float(x) for x in self.values["synthetic"]["angles_deg"].split(",") if x.strip()]


def _parse_value(section: str, key: str, raw: str):
    kind, _, choices = _SCHEMA[section][key]
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
        elif kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            value = raw.lower() in ("true", "1", "yes")
        else:
            value = raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from exc
    if choices and value not in choices:
        raise ConfigError(f"[{section}] {key}: {value!r} not one of {choices}")
    return value


def default_config() -> RunConfig:
    return RunConfig({s: {k: spec[1] for k, spec in kv.items()} for s, kv in _SCHEMA.items()})


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    cfg = default_config()
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            cfg.values[section][key] = _parse_value(section, key, raw)
    for (section, key), value in (overrides or {}).items():
        cfg.values[section][key] = value
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    run = cfg.values["run"]
    if run["task_count"] < 1:
        raise ConfigError("task_count must be >= 1")
    if not 0.0 <= run["delta"] <= 1.0:
        raise ConfigError("delta must lie in [0, 1]")
    for d in cfg.delta_grid():
        if not 0.0 <= d <= 1.0:
            raise ConfigError(f"delta grid value {d} outside [0, 1]")
    s = cfg.values["search"]
    if s["budget"] < s["population"]:
        raise ConfigError("search budget must be >= population")


# ---------------------------------------------------------------------------
# Manifest


def write_manifest(path: str, cfg: RunConfig, status: str, started: float, ended: float | None = None) -> None:
    manifest = {
        "config_hash": cfg.hash(),
        "config": cfg.values,
        "tool_version": TOOL_VERSION,
        "seed": cfg.values["run"]["seed"],
        "started_unix": started,
        "ended_unix": ended,
        "status": status,
    }
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path: str) -> dict:
    with open(path) as f:
        return json.load(f)
