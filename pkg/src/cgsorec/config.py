"""Experiment configuration: one JSON file, dotted-path overrides, and
derived per-subsystem seeds.

All randomness in a run flows from the single root `seed`; every
subsystem (split, each trainer, inference, debiased-test sampling) gets
its own stream via a stable hash of (root, name), so adding or removing
one stage never shifts another stage's draws.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

from .errors import ConfigError
from .guidance import GuidanceConfig
from .schedule import NoiseSchedule, make_schedule
from .trainer import TrainConfig


def derive_seed(root: int, name: str) -> int:
    """Stable non-negative 63-bit seed for a named subsystem."""
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def _default_model() -> dict:
    return {
        "T": 20,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "hidden_dims": [200, 600],
        "time_embed_dim": 16,
        "learning_rate": 5e-4,
        "epochs": 200,
        "batch_size": 400,
        "patience": 20,
        "valid_every": 1,
    }


def default_config() -> dict:
    return {
        "seed": 0,
        "output_dir": "runs/default",
        "dataset": {
            "interactions": None,
            "social": None,
            "n_users": None,
            "n_items": None,
            "symmetrize_social": True,
        },
        "split": {
            "ratios": [0.8, 0.1, 0.1],
            "debiased_cap": "auto",
        },
        "cgd": _default_model(),
        "csd": _default_model(),
        "guidance": {
            "eta": 0.0,
            "gamma": 0.0,
            "w_s": 0.0,
            "w_r": 0.0,
            "delta": 0.0,
            "lambda": 0.0,
            "T_inf": None,
            "stochastic": False,
            "social_keep": None,
        },
        "eval": {
            "ks": [5, 10],
            "hot_fraction": 0.05,
            "split": "debiased",
            "recall_per_user": False,
        },
        "csd_valid_fraction": 0.1,
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"{here!r} must be a table, got {type(value).__name__}")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_set(raw: dict, assignment: str) -> None:
    """Apply one `key.path=value` override in place; value parses as JSON
    when it can, and stays a string otherwise."""
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    key_path, _, value = assignment.partition("=")
    keys = key_path.strip().split(".")
    node = raw
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key {key_path!r}")
        node = node[k]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key {key_path!r}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"{key_path!r} is a table, not a value")
    node[leaf] = _coerce(value.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated view over the merged config dict."""

    raw: dict

    @property
    def seed(self) -> int:
        s = self.raw["seed"]
        if not isinstance(s, int) or s < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {s!r}")
        return s

    @property
    def output_dir(self) -> str:
        return str(self.raw["output_dir"])

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def ratios(self) -> tuple[float, float, float]:
        r = self.raw["split"]["ratios"]
        if len(r) != 3:
            raise ConfigError(f"split.ratios needs 3 entries, got {r!r}")
        return tuple(float(x) for x in r)

    @property
    def debiased_cap(self):
        return self.raw["split"]["debiased_cap"]

    @property
    def csd_valid_fraction(self) -> float:
        f = float(self.raw["csd_valid_fraction"])
        if not 0.0 <= f < 1.0:
            raise ConfigError(f"csd_valid_fraction must be in [0, 1), got {f}")
        return f

    @property
    def eval_ks(self) -> tuple[int, ...]:
        return tuple(int(k) for k in self.raw["eval"]["ks"])

    @property
    def hot_fraction(self) -> float:
        f = float(self.raw["eval"]["hot_fraction"])
        if not 0.0 < f < 1.0:
            raise ConfigError(f"eval.hot_fraction must be in (0, 1), got {f}")
        return f

    @property
    def eval_split(self) -> str:
        s = self.raw["eval"]["split"]
        if s not in ("debiased", "test"):
            raise ConfigError(f"eval.split must be 'debiased' or 'test', got {s!r}")
        return s

    @property
    def recall_per_user(self) -> bool:
        return bool(self.raw["eval"]["recall_per_user"])

    def model_section(self, kind: str) -> dict:
        kind = kind.lower()
        if kind not in ("cgd", "csd"):
            raise ConfigError(f"model must be 'cgd' or 'csd', got {kind!r}")
        return self.raw[kind]

    def schedule(self, kind: str) -> NoiseSchedule:
        s = self.model_section(kind)
        return make_schedule(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))

    def hidden_dims(self, kind: str) -> tuple[int, ...]:
        return tuple(int(d) for d in self.model_section(kind)["hidden_dims"])

    def time_embed_dim(self, kind: str) -> int:
        return int(self.model_section(kind)["time_embed_dim"])

    def train_config(self, kind: str) -> TrainConfig:
        s = self.model_section(kind)
        return TrainConfig(
            learning_rate=float(s["learning_rate"]),
            epochs=int(s["epochs"]),
            seed=derive_seed(self.seed, f"{kind.lower()}-train"),
            batch_size=int(s["batch_size"]),
            patience=int(s["patience"]),
            valid_every=int(s["valid_every"]),
        )

    def guidance(self) -> GuidanceConfig:
        g = self.raw["guidance"]
        return GuidanceConfig(
            eta=float(g["eta"]),
            gamma=float(g["gamma"]),
            w_s=float(g["w_s"]),
            w_r=float(g["w_r"]),
            delta=float(g["delta"]),
            lam=float(g["lambda"]),
            T_inf=None if g["T_inf"] is None else int(g["T_inf"]),
            stochastic=bool(g["stochastic"]),
            social_keep=None if g["social_keep"] is None else int(g["social_keep"]),
        )

    def seed_for(self, name: str) -> int:
        return derive_seed(self.seed, name)

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True) + "\n"

    def validate(self) -> "ExperimentConfig":
        """Touch every typed accessor so bad values fail at parse time."""
        _ = (
            self.seed,
            self.ratios,
            self.csd_valid_fraction,
            self.eval_ks,
            self.hot_fraction,
            self.eval_split,
            self.recall_per_user,
            self.guidance(),
        )
        for kind in ("cgd", "csd"):
            self.schedule(kind)
            self.train_config(kind)
            self.hidden_dims(kind)
            self.time_embed_dim(kind)
        return self

    def require_files(self) -> None:
        path = self.dataset["interactions"]
        if not path:
            raise ConfigError("dataset.interactions is not set")
        if not os.path.exists(path):
            raise ConfigError(f"dataset.interactions: no such file {path!r}")
        social = self.dataset["social"]
        if social is not None and not os.path.exists(social):
            raise ConfigError(f"dataset.social: no such file {social!r}")


def config_from_dict(user: dict) -> ExperimentConfig:
    return ExperimentConfig(_merge(default_config(), user)).validate()


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read JSON config, apply --set overrides, validate."""
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path!r}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path!r} is not valid JSON: {err}") from err
    if not isinstance(user, dict):
        raise ConfigError(f"config {path!r} must hold a JSON object")
    merged = _merge(default_config(), user)
    for assignment in overrides:
        apply_set(merged, assignment)
    return ExperimentConfig(merged).validate()
