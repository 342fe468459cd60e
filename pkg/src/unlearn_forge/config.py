"""Experiment configuration: TOML with dotted sections over built-in defaults.

Every key of a user file must exist in ``DEFAULTS``; values are type-checked
against the default's type and then validated semantically.  Errors carry the
dotted path of the offending field.  ``docs/config.md`` documents each key.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path

from .attacks import ReaClassConfig, ReaSampleConfig
from .errors import ConfigError
from .nn import MlpArchitecture, SgdConfig
from .unlearn import METHODS, ORTH_VARIANTS, UnlearnConfig, random_model_delta

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MODES = ("class_wise", "sample_wise")
CLASS_ATTACKS = ("rea_class",)
SAMPLE_ATTACKS = ("lira", "rea_sample", "up")

_SGD = {"lr": 0.01, "momentum": 0.9, "weight_decay": 5e-4, "decay_factor": 1.0, "decay_epochs": [], "batch_size": 64}

DEFAULTS: dict = {
    "experiment": {
        "name": "experiment",
        "mode": "class_wise",
        "trial_count": 20,
        "master_seed": 0,
        "output_dir": "runs/experiment",
        "methods": ["retrain", "rl", "our"],
        "attacks": ["rea_class"],
    },
    "data": {
        "source": "synthetic",
        "known_classes": 8,
        "ood_classes": 10,
        "dim": 16,
        "per_class": 200,
        "spread": 0.5,
        "mean_scale": 1.0,
        "test_fraction": 0.2,
        "aux_per_class": 50,
        "csv_train": "",
        "csv_test": "",
        "csv_aux": "",
    },
    "split": {"unlearn_fraction": 0.1, "unlearn_class": -1, "ood_candidates": 5},
    "model": {"hidden": [64, 64, 64], "activation": "relu"},
    "train": {"epochs": 30, "lr": 0.05, "momentum": 0.9, "weight_decay": 5e-4, "batch_size": 64},
    "unlearn": {
        "retrain": _SGD | {"epochs": 30, "lr": 0.05},
        "ft": _SGD | {"epochs": 5},
        "ga": _SGD | {"epochs": 5, "lr": 0.03, "clip": 10.0},
        "rl": _SGD | {"epochs": 1, "lr": 0.003},
        "l1_sparse": _SGD | {"epochs": 5, "l1_lambda": 1e-5},
        "our": {
            "epochs_phase1": 8,
            "epochs_phase2": 8,
            "lr_phase1": 0.01,
            "lr_phase2": 0.01,
            "momentum": 0.9,
            "weight_decay": 5e-4,
            "decay_factor": 0.5,
            "decay_epochs": [3],
            "delta_threshold": 0.005,
            "orth_layers": [],
            "l1_lambda": 1e-5,
            "orth_variant": "inner",
            "normalize_features": True,
            "exact_orth_grad": False,
            "guard_per_batch": False,
            "batch_size": 64,
        },
    },
    "attack": {
        "rea_class": {
            "learning_rates": [0.001, 0.005, 0.007, 0.01],
            "idx_max": 75,
            "convergence_threshold": 0.75,
            "reference_ratio": 6.0,
            "inferred_fraction": 0.2,
            "momentum": 0.9,
            "weight_decay": 5e-4,
        },
        "lira": {"shadow_count": 16, "shadow_epochs": 20, "shadow_lr": 0.05, "train_fraction": 0.5},
        "rea_sample": {"pseudo_retain_fraction": 0.3, "epochs": 5, "lr": 0.005, "batch_size": 64},
        "up": {"shadow_count": 4, "max_imbalance": 10.0},
    },
    "metrics": {
        "fpr_target": 0.1,
        "residual": "loss",
        "probe_layer": -1,
        "representation": True,
        "rep_per_class": 50,
        "mia_attack": "lira",
    },
    "landscape": {"trial": 0, "extent": 1.0, "resolution": 21, "seed": 0, "trajectory": True},
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError("unknown key", where)
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError("must be a table", where)
            out[key] = _merge(default, value, where + ".")
        else:
            out[key] = _coerce(value, default, where)
    return out


def _coerce(value, default, where: str):
    if where.endswith("delta_threshold") and value == "random":
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("must be a boolean", where)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("must be an integer", where)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("must be a number", where)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError("must be a string", where)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError("must be a list", where)
        return list(value)
    return value


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ConfigError(msg, where)


@dataclass
class ExperimentConfig:
    raw: dict
    source: str = "<defaults>"

    # --- convenience views -------------------------------------------------
    def __getitem__(self, section: str) -> dict:
        return self.raw[section]

    @property
    def mode(self) -> str:
        return self.raw["experiment"]["mode"]

    @property
    def trial_count(self) -> int:
        return self.raw["experiment"]["trial_count"]

    @property
    def master_seed(self) -> int:
        return self.raw["experiment"]["master_seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["experiment"]["output_dir"])

    @property
    def methods(self) -> list[str]:
        return list(self.raw["experiment"]["methods"])

    @property
    def attacks(self) -> list[str]:
        return list(self.raw["experiment"]["attacks"])

    @property
    def known_classes(self) -> int:
        return self.raw["data"]["known_classes"]

    @property
    def ood_classes(self) -> int:
        return self.raw["data"]["ood_classes"] if self.mode == "class_wise" else 0

    def architecture(self, seed: int) -> MlpArchitecture:
        m = self.raw["model"]
        return MlpArchitecture((self.raw["data"]["dim"], *m["hidden"], self.known_classes), m["activation"], seed)

    def train_sgd(self) -> SgdConfig:
        t = self.raw["train"]
        return SgdConfig(t["lr"], t["momentum"], t["weight_decay"])

    def unlearn_config(self, method: str, seed: int, arch: MlpArchitecture | None = None) -> UnlearnConfig:
        c = self.raw["unlearn"][method]
        if method == "our":
            thr = c["delta_threshold"]
            if thr == "random":
                thr = random_model_delta(arch, seed) if arch is not None else 0.0
            return UnlearnConfig(
                "our",
                epochs_phase1=c["epochs_phase1"],
                epochs_phase2=c["epochs_phase2"],
                sgd_phase1=SgdConfig(c["lr_phase1"], c["momentum"], c["weight_decay"]),
                sgd_phase2=SgdConfig(c["lr_phase2"], c["momentum"], c["weight_decay"],
                                     c["decay_factor"], tuple(c["decay_epochs"])),
                delta_threshold=float(thr),
                orth_layers=tuple(c["orth_layers"]),
                l1_lambda=c["l1_lambda"],
                seed=seed,
                batch_size=c["batch_size"],
                orth_variant=c["orth_variant"],
                normalize_features=c["normalize_features"],
                guard_per_batch=c["guard_per_batch"],
                exact_orth_grad=c["exact_orth_grad"],
            )
        sgd = SgdConfig(c["lr"], c["momentum"], c["weight_decay"], c["decay_factor"], tuple(c["decay_epochs"]))
        return UnlearnConfig(
            method,
            epochs_phase1=c["epochs"],
            sgd_phase1=sgd,
            l1_lambda=c.get("l1_lambda", 0.0),
            seed=seed,
            batch_size=c["batch_size"],
            ga_clip=c.get("clip", 10.0),
        )

    def rea_class_config(self, unlearn_label: int, seed: int) -> ReaClassConfig:
        c = self.raw["attack"]["rea_class"]
        return ReaClassConfig(tuple(c["learning_rates"]), c["idx_max"], c["convergence_threshold"],
                              c["reference_ratio"], unlearn_label, seed, c["momentum"], c["weight_decay"])

    def rea_sample_config(self, inference_size: int, seed: int) -> ReaSampleConfig:
        c = self.raw["attack"]["rea_sample"]
        size = int(c["pseudo_retain_fraction"] * inference_size)
        t = self.raw["train"]
        return ReaSampleConfig(size, c["epochs"], c["lr"], seed, c["batch_size"], t["momentum"], t["weight_decay"])


def validate(raw: dict) -> None:
    e, d, s = raw["experiment"], raw["data"], raw["split"]
    _require(e["mode"] in MODES, "experiment.mode", f"must be one of {MODES}")
    _require(e["trial_count"] >= 1, "experiment.trial_count", "must be >= 1")
    for i, m in enumerate(e["methods"]):
        _require(m in METHODS, f"experiment.methods[{i}]", f"unknown method {m!r}")
    allowed = CLASS_ATTACKS if e["mode"] == "class_wise" else SAMPLE_ATTACKS
    for i, a in enumerate(e["attacks"]):
        _require(a in allowed, f"experiment.attacks[{i}]", f"{a!r} not available in {e['mode']} mode")
    _require(d["source"] in ("synthetic", "csv"), "data.source", "must be 'synthetic' or 'csv'")
    _require(d["known_classes"] >= 2, "data.known_classes", "must be >= 2")
    _require(d["dim"] >= 1, "data.dim", "must be >= 1")
    _require(d["per_class"] >= 1, "data.per_class", "must be >= 1")
    _require(d["spread"] >= 0, "data.spread", "must be non-negative")
    _require(0 < d["test_fraction"] <= 1, "data.test_fraction", "must be in (0, 1]")
    if d["source"] == "csv":
        _require(bool(d["csv_train"]), "data.csv_train", "required when data.source = 'csv'")
        _require(bool(d["csv_test"]), "data.csv_test", "required when data.source = 'csv'")
        if e["mode"] == "sample_wise":
            _require(bool(d["csv_aux"]), "data.csv_aux", "sample-wise csv runs need attacker auxiliary data")
    _require(0 < s["unlearn_fraction"] < 1, "split.unlearn_fraction", "must be in (0, 1)")
    uc = s["unlearn_class"]
    _require(uc == -1 or 0 <= uc < d["known_classes"], "split.unlearn_class",
             f"class id {uc} outside [0, {d['known_classes']}) (use -1 for a random class per trial)")
    if e["mode"] == "class_wise":
        _require(d["ood_classes"] >= 2, "data.ood_classes", "class-wise mode needs at least 2 OOD classes")
        _require(1 <= s["ood_candidates"] < d["ood_classes"], "split.ood_candidates",
                 "must be in [1, data.ood_classes) so a reference pool remains")
    m = raw["model"]
    _require(len(m["hidden"]) >= 1, "model.hidden", "needs at least one hidden layer")
    for i, w in enumerate(m["hidden"]):
        _require(isinstance(w, int) and w >= 1, f"model.hidden[{i}]", "widths must be positive integers")
    _require(m["activation"] in ("relu", "tanh"), "model.activation", "must be relu or tanh")
    _require(raw["train"]["lr"] > 0, "train.lr", "must be positive")
    _require(raw["train"]["epochs"] >= 0, "train.epochs", "must be non-negative")
    for name, c in raw["unlearn"].items():
        base = f"unlearn.{name}"
        for key in ("lr", "lr_phase1", "lr_phase2"):
            if key in c:
                _require(c[key] > 0, f"{base}.{key}", "must be positive")
        for key in ("epochs", "epochs_phase1", "epochs_phase2"):
            if key in c:
                _require(c[key] >= 0, f"{base}.{key}", "must be non-negative")
        if "decay_factor" in c:
            _require(0 < c["decay_factor"] <= 1, f"{base}.decay_factor", "must be in (0, 1]")
    our = raw["unlearn"]["our"]
    thr = our["delta_threshold"]
    _require(thr == "random" or (isinstance(thr, float) and thr >= 0), "unlearn.our.delta_threshold",
             "must be a non-negative number or 'random'")
    _require(our["orth_variant"] in ORTH_VARIANTS, "unlearn.our.orth_variant", f"must be one of {ORTH_VARIANTS}")
    for i, l in enumerate(our["orth_layers"]):
        _require(isinstance(l, int) and 0 <= l < len(m["hidden"]), f"unlearn.our.orth_layers[{i}]",
                 "must index a hidden layer")
    rc = raw["attack"]["rea_class"]
    _require(len(rc["learning_rates"]) >= 1, "attack.rea_class.learning_rates", "must be non-empty")
    _require(0 < rc["convergence_threshold"] < 1, "attack.rea_class.convergence_threshold", "must be in (0, 1)")
    _require(0 < rc["inferred_fraction"] <= 1, "attack.rea_class.inferred_fraction", "must be in (0, 1]")
    _require(rc["reference_ratio"] > 0, "attack.rea_class.reference_ratio", "must be positive")
    _require(rc["idx_max"] >= 1, "attack.rea_class.idx_max", "must be >= 1")
    _require(raw["attack"]["lira"]["shadow_count"] >= 2, "attack.lira.shadow_count", "must be >= 2")
    rs = raw["attack"]["rea_sample"]
    _require(0 < rs["pseudo_retain_fraction"] <= 1, "attack.rea_sample.pseudo_retain_fraction", "must be in (0, 1]")
    _require(rs["lr"] > 0, "attack.rea_sample.lr", "must be positive")
    mt = raw["metrics"]
    _require(0 < mt["fpr_target"] < 1, "metrics.fpr_target", "must be in (0, 1)")
    _require(mt["residual"] in ("loss", "confidence"), "metrics.residual", "must be 'loss' or 'confidence'")
    _require(mt["probe_layer"] == -1 or 0 <= mt["probe_layer"] < len(m["hidden"]), "metrics.probe_layer",
             "must index a hidden layer or be -1 (last hidden)")
    ls = raw["landscape"]
    _require(ls["resolution"] >= 3 and ls["resolution"] % 2 == 1, "landscape.resolution", "must be odd and >= 3")
    _require(ls["extent"] >= 0, "landscape.extent", "must be non-negative")
    _require(0 <= ls["trial"] < e["trial_count"], "landscape.trial", "must index an existing trial")


def from_dict(user: dict, source: str = "<dict>") -> ExperimentConfig:
    raw = _merge(DEFAULTS, user)
    validate(raw)
    return ExperimentConfig(raw, source)


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a TOML file (or the defaults) and apply ``experiment.*`` overrides."""
    user: dict = {}
    source = "<defaults>"
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found", "--config")
        try:
            user = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}", "--config") from None
        source = str(path)
    exp = dict(user.get("experiment", {}))
    for key, value in overrides.items():
        if value is not None:
            exp[key] = value
    if exp:
        user = {**user, "experiment": exp}
    return from_dict(user, source)

