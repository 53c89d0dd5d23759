"""Shared fixtures: a deliberately tiny network and hand-built scenes."""

from __future__ import annotations

import numpy as np
import pytest

from bigat import constants as _ct
from bigat.model import ModelConfig
from bigat.scene import FeatureGrid, SceneSample, TrajectoryWindow

TINY = dict(
    embedding_dim=4,
    encoder_hidden=6,
    gat_dim=5,
    gat_layers=2,
    cnn_channels=(3, 4),
    attention_hidden=5,
    latent_dim=3,
    decoder_hidden=6,
    classifier_hidden=5,
    latent_hidden=5,
)


def make_scene(
    rng: np.random.Generator,
    n: int = 3,
    with_grid: bool = True,
    scene_id: str = "fixture",
) -> SceneSample:
    """``n`` pedestrians on noisy straight lines, optionally over a random 7 x 7 grid."""
    t = np.arange(_ct.T_TOTAL, dtype=np.float64)[:, None]
    windows = []
    for j in range(n):
        start = rng.uniform(-4.0, 4.0, size=2)
        velocity = rng.uniform(-0.5, 0.5, size=2)
        path = start + t * velocity + rng.normal(0.0, 0.02, size=(_ct.T_TOTAL, 2))
        windows.append(TrajectoryWindow(10 + j, path[: _ct.T_OBS], path[_ct.T_OBS :]))
    grid = FeatureGrid(rng.uniform(-1.0, 1.0, size=(7, 7, 1))) if with_grid else None
    return SceneSample(tuple(windows), grid=grid, scene_id=scene_id)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(**TINY)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def scene(rng: np.random.Generator) -> SceneSample:
    return make_scene(rng)
