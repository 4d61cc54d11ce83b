"""Experiment configuration: flat key-value file with one section per module.

Unknown sections or keys are hard errors - a silently ignored typo can
corrupt an experiment. Every key has a default matching the published
hyperparameters (batch size 64, Adam learning rate 1e-3 with weight decay
1e-6, 3e-3 for the Student-t case, patience 5, the minimum-epoch schedule
by dataset size, alpha interval/window 64, finite-difference start 1e-5
with threshold 0.01).
"""

import configparser
import hashlib
from dataclasses import dataclass, field

from .training import TrainConfig, min_epochs_for


class InvalidConfig(Exception):
    pass


_CASE_LR = {"sis": 1e-3, "gp": 1e-3, "stp": 3e-3, "toy": 1e-3}

# section -> key -> (type, default); None defaults are resolved case by case
_SCHEMA = {
    "run": {
        "case": (str, None),
        "size_label": (str, "30K"),
        "n_train": (int, 10_000),
        "loss_mode": (str, "asa"),
        "seed": (int, 0),
        "out_dir": (str, "runs/out"),
    },
    "model": {
        "sis_nodes": (int, 8),
        "grid_side": (int, 25),
        "conv_blocks": (int, 3),
    },
    "training": {
        "batch_size": (int, 64),
        "learning_rate": (float, None),
        "weight_decay": (float, 1e-6),
        "min_epochs": (int, None),
        "max_epochs": (int, 500),
        "patience": (int, 5),
        "bce_reduction": (str, "mean"),
        "alpha_interval": (int, 64),
        "alpha_window": (int, 64),
        "fd_initial": (float, 1e-5),
        "fd_threshold": (float, 0.01),
        "fd_floor": (float, 1e-8),
    },
    "evaluation": {
        "ltest_size": (int, 20_000),
        "etest_groups": (int, 30),
        "etest_group_size": (int, 10),
        "etest_grid_target": (int, 100),
        "eval_seed": (int, 10_007),
        "level": (float, 0.95),
    },
}

_VALID_CASES = ("sis", "gp", "stp", "toy")
_VALID_LOSS = ("bce", "asa")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            min_epochs=self.min_epochs,
            max_epochs=self.max_epochs,
            patience=self.patience,
            loss_mode=self.loss_mode,
            seed=self.seed,
            bce_reduction=self.bce_reduction,
            alpha_interval=self.alpha_interval,
            alpha_window=self.alpha_window,
            fd_initial=self.fd_initial,
            fd_threshold=self.fd_threshold,
            fd_floor=self.fd_floor,
        )

    def model_kwargs(self):
        return {"sis_nodes": self.sis_nodes, "grid_side": self.grid_side}

    def data_hash(self):
        """Hash over everything that determines the simulated datasets."""
        keys = ("case", "n_train", "seed", "sis_nodes", "grid_side")
        text = "|".join(f"{k}={self.values[k]}" for k in keys)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def config_hash(self):
        text = "|".join(f"{k}={v}" for k, v in sorted(self.values.items()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _defaults(case):
    out = {}
    for section, keys in _SCHEMA.items():
        for key, (typ, default) in keys.items():
            out[key] = default
    out["learning_rate"] = _CASE_LR[case]
    return out


def _coerce(section, key, raw):
    typ, _ = _SCHEMA[section][key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise InvalidConfig(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc


def load_config(path, overrides=None):
    """Parse and validate a config file; overrides come from CLI flags."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InvalidConfig(f"config file not found: {path}")

    raw = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise InvalidConfig(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise InvalidConfig(f"unknown key {key!r} in section [{section}]")
            raw[(section, key)] = value

    case = raw.get(("run", "case"))
    if case is None:
        raise InvalidConfig("missing required key: [run] case")
    case = case.lower()
    if case not in _VALID_CASES:
        raise InvalidConfig(f"[run] case must be one of {_VALID_CASES}, got {case!r}")

    values = _defaults(case)
    values["case"] = case
    for (section, key), text in raw.items():
        if key == "case":
            continue
        values[key] = _coerce(section, key, text)

    if overrides:
        for key, value in overrides.items():
            if value is not None:
                values[key] = value

    if values["loss_mode"] not in _VALID_LOSS:
        raise InvalidConfig(f"loss_mode must be one of {_VALID_LOSS}, got {values['loss_mode']!r}")
    if values["min_epochs"] is None:
        values["min_epochs"] = min_epochs_for(values["n_train"])
    if values["n_train"] < 1:
        raise InvalidConfig("n_train must be at least 1")
    return RunConfig(values=values)
