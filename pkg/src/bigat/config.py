"""
Run configuration: one flat ``key = value`` file for every knob.

Example file::

    # constant-velocity experiment
    seed = 7
    lambda_traj = 10
    cnn_channels = 8, 16
    train_data = data/synth/cv.txt

Unknown keys are rejected with close-match suggestions. Command-line flags
override file values.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace
from difflib import get_close_matches
from typing import Any, Mapping, Optional

import fsspec

from . import constants as _ct
from .data import check_scene_name
from .errors import ConfigError
from .evaluation import BEST_OF_K_MODES
from .model import ModelConfig
from .training import LossWeights, OptimizerConfig

logger = logging.getLogger("bigat.config")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0

    # model
    variant: str = "social-bigat"
    embedding_dim: int = 16
    encoder_hidden: int = 32
    gat_dim: int = 32
    gat_layers: int = 2
    cnn_channels: tuple[int, ...] = (8, 16)
    grid_channels: int = 1
    attention_hidden: int = 32
    latent_dim: int = 8
    decoder_hidden: int = 64
    classifier_hidden: int = 32
    latent_hidden: int = 32

    # objective
    lambda_z: float = _ct.DEFAULT_LAMBDA_Z
    lambda_traj: float = _ct.DEFAULT_LAMBDA_TRAJ
    lambda_kl: float = _ct.DEFAULT_LAMBDA_KL
    lz_updates_encoder: bool = True
    train_variety: bool = False
    variety_k: int = 20

    # optimizer and loop
    learning_rate: float = _ct.DEFAULT_LEARNING_RATE
    discriminator_learning_rate: float = _ct.DEFAULT_LEARNING_RATE
    beta1: float = _ct.DEFAULT_BETAS[0]
    beta2: float = _ct.DEFAULT_BETAS[1]
    adam_eps: float = _ct.DEFAULT_ADAM_EPS
    batch_scenes: int = 1
    epochs: int = 1
    max_steps: int = 0
    checkpoint_every: int = 0
    training_log: str = ""

    # data
    data_dir: str = "data"
    train_data: str = ""
    test_data: str = ""
    split_manifest: str = ""
    holdout: str = ""
    stride: int = 1

    # evaluation
    k: int = 20
    best_of_k_mode: str = "min-ade"
    workers: int = 1

    def __post_init__(self) -> None:
        self.model_config()
        self.loss_weights()
        self.optimizer_config()
        for key in ("k", "epochs", "stride", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}", key=key)
        for key in ("max_steps", "checkpoint_every"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}", key=key)
        if self.best_of_k_mode not in BEST_OF_K_MODES:
            raise ConfigError(
                f"best_of_k_mode must be one of {', '.join(BEST_OF_K_MODES)}, got '{self.best_of_k_mode}'",
                key="best_of_k_mode",
            )
        if self.holdout:
            check_scene_name(self.holdout)

    # ------------------------------------------------------------ derived

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embedding_dim=self.embedding_dim,
            encoder_hidden=self.encoder_hidden,
            gat_dim=self.gat_dim,
            gat_layers=self.gat_layers,
            cnn_channels=self.cnn_channels,
            grid_channels=self.grid_channels,
            attention_hidden=self.attention_hidden,
            latent_dim=self.latent_dim,
            decoder_hidden=self.decoder_hidden,
            classifier_hidden=self.classifier_hidden,
            latent_hidden=self.latent_hidden,
            variant=self.variant,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_z, self.lambda_traj, self.lambda_kl)

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            generator_rate=self.learning_rate,
            discriminator_rate=self.discriminator_learning_rate,
            betas=(self.beta1, self.beta2),
            epsilon=self.adam_eps,
            batch_scenes=self.batch_scenes,
            variety_k=self.variety_k,
            train_variety=self.train_variety,
            lz_updates_encoder=self.lz_updates_encoder,
        )

    # ------------------------------------------------------------ loading

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: Optional["RunConfig"] = None) -> "RunConfig":
        """Build a config from raw (usually string) values on top of ``base`` or the defaults."""
        base = base or cls()
        known = cls.keys()
        coerced = {}
        for key, raw in values.items():
            if key not in known:
                suggestions = get_close_matches(key, known, n=3, cutoff=0.6)
                hint = f" Did you mean: {', '.join(suggestions)}?" if suggestions else ""
                raise ConfigError(f"unknown config key '{key}'.{hint}", key=key, suggestions=suggestions)
            coerced[key] = _coerce(key, raw, getattr(base, key))
        return replace(base, **coerced)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        config = cls()
        if path:
            with fsspec.open(path, "r") as handle:
                config = cls.from_mapping(parse_config_text(handle.read()), config)
            logger.debug("loaded config %s", path)
        if overrides:
            config = cls.from_mapping(overrides, config)
        return config

    def to_text(self) -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with fsspec.open(path, "w") as handle:
            handle.write(self.to_text())


def sidecar_path(checkpoint_path: str) -> str:
    """Where a checkpoint's network sizes are recorded."""
    return f"{checkpoint_path}.cfg"


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {number}: empty key")
        if key in values:
            raise ConfigError(f"config line {number}: duplicate key '{key}'", key=key)
        values[key] = value
    return values


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """Turn ``["k=5", "seed=1"]`` into a mapping; later pairs win."""
    values: dict[str, str] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _coerce(key: str, raw: Any, default: Any) -> Any:
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(part) for part in text.replace(" ", "").split(",") if part)
    except ValueError:
        kind = type(default).__name__
        raise ConfigError(f"config key '{key}' expects {kind}, got {raw!r}", key=key) from None
    return text
