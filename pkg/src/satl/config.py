"""Run configuration: an INI document with [data], [source_train], [adapt],
and [eval] sections, resolved against built-in defaults.

Unknown sections or keys are rejected with a message listing every
offender. Two presets ship with the package: "desk" (small-scale settings
that train in minutes on a laptop CPU) and "fullscale" (learning rates and
epoch counts sized for full-resolution datasets; expect very slow
convergence at desk scale).
"""

import configparser
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .losses import LossWeights
from .pipeline import AdaptConfig, SourceTrainConfig

PRESET_NAMES = ("desk", "fullscale")
SEED_ENV_VAR = "SATL_SEED"


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 64
    cdr_threshold: float = 0.6


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    batch_size: int = 64


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig
    source_train: SourceTrainConfig
    adapt: AdaptConfig
    eval: EvalConfig


_SCHEMA = {
    "data": {"image_size": int, "cdr_threshold": float},
    "source_train": {
        "learning_rate": float,
        "weight_decay": float,
        "batch_size": int,
        "epochs": int,
        "train_fraction": float,
        "seed": int,
    },
    "adapt": {
        "encoder_lr": float,
        "other_lr": float,
        "epochs": int,
        "batch_size": int,
        "alpha": float,
        "beta1": float,
        "beta2": float,
        "reduction": str,
        "latent_channels": int,
        "seed": int,
    },
    "eval": {"threshold": float, "batch_size": int},
}


def default_seed() -> int:
    """Seed fallback: the SATL_SEED environment variable, then 0."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def _coerce(section: str, key: str, raw: str, typ):
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {typ.__name__}") from None


def parse_run_config(text: str, origin: str = "<config>") -> RunConfig:
    """Parse and validate an INI config, applying defaults for absent keys."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as e:
        raise ConfigError(f"{origin}: {e}") from None

    bad = []
    for section in cp.sections():
        if section not in _SCHEMA:
            bad.append(f"[{section}] (unknown section)")
            continue
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                bad.append(f"[{section}] {key}")
    if bad:
        raise ConfigError(f"{origin}: unknown configuration keys: " + ", ".join(sorted(bad)))

    values: dict = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        if cp.has_section(section):
            for key, typ in keys.items():
                if cp.has_option(section, key):
                    values[section][key] = _coerce(section, key, cp.get(section, key), typ)

    env_seed = default_seed()
    st = values["source_train"]
    st.setdefault("seed", env_seed)
    ad = values["adapt"]
    ad.setdefault("seed", env_seed)

    weights = LossWeights(
        alpha=ad.pop("alpha", 0.3),
        beta1=ad.pop("beta1", 0.2),
        beta2=ad.pop("beta2", 0.5),
        reduction=ad.pop("reduction", "mean"),
    )
    try:
        return RunConfig(
            data=DataConfig(**values["data"]),
            source_train=SourceTrainConfig(**st),
            adapt=AdaptConfig(loss_weights=weights, **ad),
            eval=EvalConfig(**values["eval"]),
        )
    except Exception as e:
        raise ConfigError(f"{origin}: {e}") from None


def load_run_config(name_or_path: Optional[str]) -> RunConfig:
    """Resolve a --config value: a preset name ('desk', 'fullscale'), a
    path to an INI file, or None for the desk preset."""
    if name_or_path is None:
        name_or_path = "desk"
    if name_or_path in PRESET_NAMES:
        text = (resources.files("satl") / "presets" / f"{name_or_path}.ini").read_text()
        return parse_run_config(text, origin=f"preset:{name_or_path}")
    path = Path(name_or_path)
    if not path.is_file():
        raise ConfigError(
            f"--config {name_or_path!r} is neither a preset ({', '.join(PRESET_NAMES)}) nor a file"
        )
    return parse_run_config(path.read_text(), origin=str(path))
