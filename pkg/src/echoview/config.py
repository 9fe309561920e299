"""Flat ``key = value`` run configuration.

Sources are merged as defaults < config file < ``ECHOVIEW_*`` environment
variables < command-line flags. Unknown keys are errors everywhere.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .augment import AugmentConfig
from .model import ModelConfig
from .training.trainer import TrainConfig

ENV_PREFIX = "ECHOVIEW_"


class ConfigFileError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(text: str):
        return None if text.strip().lower() in ("", "none") else parse(text.strip())

    return inner


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _method(text: str) -> str:
    t = text.strip()
    if t not in ("baseline", "supcon"):
        raise ValueError(f"method must be baseline or supcon, got {t!r}")
    return t


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_M, _A, _T = ModelConfig(), AugmentConfig(), TrainConfig()

# key: (parser, default)
FIELDS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "data": (_opt(str), None),
    "seed": (int, 0),
    "method": (_method, "baseline"),
    "splits": (int, 8),
    "validation_frac": (float, 0.10),
    "subsample": (_opt(int), None),
    "threads": (int, 0),
    "input_size": (int, _M.input_size),
    "block_channels": (_ints, _M.block_channels),
    "kernel_size": (int, _M.kernel_size),
    "fc_hidden": (int, _M.fc_hidden),
    "projection_hidden": (int, _M.projection_hidden),
    "projection_dim": (int, _M.projection_dim),
    "normalize_projection": (_bool, _M.normalize_projection),
    "learning_rate": (float, _T.learning_rate),
    "batch_size": (int, _T.batch_size),
    "max_epochs": (int, _T.max_epochs),
    "patience": (int, _T.patience),
    "tau": (float, _T.tau),
    "precision": (int, _T.precision),
    "stage2_max_epochs": (_opt(int), None),
    "stage2_learning_rate": (_opt(float), None),
    "brightness_delta": (float, _A.brightness_delta),
    "contrast_min": (float, _A.contrast_range[0]),
    "contrast_max": (float, _A.contrast_range[1]),
    "max_rotation_deg": (float, _A.max_rotation_deg),
    "max_translation_frac": (float, _A.max_translation_frac),
    "crop_size": (_opt(int), None),
}


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(
            input_size=v["input_size"],
            block_channels=v["block_channels"],
            kernel_size=v["kernel_size"],
            fc_hidden=v["fc_hidden"],
            projection_hidden=v["projection_hidden"],
            projection_dim=v["projection_dim"],
            normalize_projection=v["normalize_projection"],
        )

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            learning_rate=v["learning_rate"],
            batch_size=v["batch_size"],
            max_epochs=v["max_epochs"],
            patience=v["patience"],
            tau=v["tau"],
            seed=v["seed"],
            precision=v["precision"],
            method=v["method"],
            stage2_max_epochs=v["stage2_max_epochs"],
            stage2_learning_rate=v["stage2_learning_rate"],
        )

    def augment_config(self) -> AugmentConfig:
        v = self.values
        return AugmentConfig(
            brightness_delta=v["brightness_delta"],
            contrast_range=(v["contrast_min"], v["contrast_max"]),
            max_rotation_deg=v["max_rotation_deg"],
            max_translation_frac=v["max_translation_frac"],
            crop_size=v["crop_size"],
            seed=v["seed"],
        )

    def replace(self, **changes) -> "RunConfig":
        for k in changes:
            if k not in FIELDS:
                raise ConfigFileError(f"unknown config key {k!r}")
        return RunConfig({**self.values, **changes})

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in FIELDS)

    def validate(self) -> None:
        self.model_config()
        self.train_config()
        aug = self.augment_config()
        if aug.crop_size is not None and aug.crop_size >= self.values["input_size"]:
            raise ValueError(f"crop_size {aug.crop_size} must be smaller than input_size {self.values['input_size']}")
        if self.values["splits"] < 1:
            raise ValueError("splits must be >= 1")
        if not 0 < self.values["validation_frac"] < 1:
            raise ValueError("validation_frac must lie in (0, 1)")
        if self.values["subsample"] is not None and self.values["subsample"] < 1:
            raise ValueError("subsample must be >= 1")
        if self.values["threads"] < 0:
            raise ValueError("threads must be >= 0")


def defaults() -> RunConfig:
    return RunConfig({k: d for k, (_, d) in FIELDS.items()})


def _parse_value(key: str, text: str, where: str):
    if key not in FIELDS:
        raise ConfigFileError(f"{where}: unknown config key {key!r}")
    try:
        return FIELDS[key][0](text)
    except ValueError as exc:
        raise ConfigFileError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = _parse_value(key, value, f"{source}:{lineno}")
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    env = os.environ if environ is None else environ
    out = {}
    for name, value in env.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX) :].lower()
            out[key] = _parse_value(key, value, f"environment {name}")
    return out


def resolve(
    config_file: str | os.PathLike | None = None,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    values = dict(defaults().values)
    if config_file is not None:
        with open(config_file) as fh:
            values.update(parse_config_text(fh.read(), str(config_file)))
    values.update(env_overrides(environ))
    for k, v in (flags or {}).items():
        if v is None:
            continue
        if k not in FIELDS:
            raise ConfigFileError(f"unknown config key {k!r}")
        values[k] = FIELDS[k][0](v) if isinstance(v, str) else v
    cfg = RunConfig(values)
    cfg.validate()
    return cfg
