"""
Finite-difference checks for every layer and every training loss.

All checks run on a fixed two-pedestrian scene with a random 7 x 7 grid and a
deliberately small network, so the whole suite takes seconds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import pandas as pd

from . import autodiff as ad
from . import constants as _ct
from . import layers as nn
from .autodiff import GradientCheckReport, Value, gradient_check
from .model import ModelConfig, init_parameters
from .params import ParameterStore
from .scene import FeatureGrid, SceneSample, TrajectoryWindow
from .training import (
    LossWeights,
    discriminator_losses,
    generator_objective,
    kl_divergence,
    trajectory_l2,
)

logger = logging.getLogger("bigat.gradcheck")

TOY_CONFIG = ModelConfig(
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


@dataclass(frozen=True)
class CheckResult:
    name: str
    report: GradientCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def toy_scene(rng: np.random.Generator, with_grid: bool = True) -> SceneSample:
    """Two pedestrians walking towards each other with a little jitter."""
    t = np.arange(_ct.T_TOTAL, dtype=np.float64)[:, None]
    first = np.hstack([-3.0 + 0.4 * t, 0.1 * np.ones_like(t)])
    second = np.hstack([3.0 - 0.35 * t, -0.2 + 0.02 * t])
    paths = np.stack([first, second]) + rng.normal(0.0, 0.05, size=(2, _ct.T_TOTAL, 2))
    windows = tuple(TrajectoryWindow(j, p[: _ct.T_OBS], p[_ct.T_OBS :]) for j, p in enumerate(paths))
    grid = FeatureGrid(rng.uniform(-1.0, 1.0, size=(7, 7, 1))) if with_grid else None
    return SceneSample(windows, grid=grid, scene_id="toy")


def _projection(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.normal(size=shape)


def _param_check(
    store: ParameterStore,
    name: str,
    loss: Callable[[], Value],
    step: float,
    tolerance: float,
    coordinates: int,
) -> GradientCheckReport:
    size = store[name].data.size
    picks = np.linspace(0, size - 1, num=min(coordinates, size)).astype(int)

    def f(x: Value) -> Value:
        with store.substituted(name, x):
            return loss()

    try:
        return gradient_check(f, store[name].data, step=step, tolerance=tolerance, coordinates=np.unique(picks))
    finally:
        store.zero_grad()


def run_suite(
    seed: int = 0,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    coordinates: int = 4,
    config: Optional[ModelConfig] = None,
) -> list[CheckResult]:
    config = config or TOY_CONFIG
    rng = np.random.default_rng(seed)
    scene = toy_scene(rng)
    store = init_parameters(config, rng)
    # zero-initialised biases put ReLUs fed by the zero first displacement on their kink
    for name in store.names():
        if not np.any(store[name].data):
            store.set(name, rng.normal(0.0, 0.1, size=store[name].shape))
    results: list[CheckResult] = []

    def check(name: str, f: Callable[[Value], Value], point: np.ndarray) -> None:
        report = gradient_check(f, point, step=step, tolerance=tolerance)
        store.zero_grad()
        results.append(CheckResult(name, report))

    # layers, checked against their inputs
    mlp = nn.MlpSpec((3, 5, 2), activation="tanh")
    nn.init_mlp(store, "check.mlp", mlp, rng)
    r_mlp = _projection(rng, (4, 2))
    check("layer:mlp", lambda x: (nn.mlp_forward(mlp, store, "check.mlp", x) * r_mlp).sum(), rng.normal(size=(4, 3)))

    lstm = nn.LstmSpec(3, 4)
    nn.init_lstm(store, "check.lstm", lstm, rng)
    r_lstm = _projection(rng, (2, 4))

    def lstm_loss(x: Value) -> Value:
        outputs, state = nn.lstm_forward(lstm, store, "check.lstm", [x[:, t, :] for t in range(x.shape[1])])
        return (state.h * r_lstm).sum() + (state.c * r_lstm).sum()

    check("layer:lstm", lstm_loss, rng.normal(size=(2, 5, 3)))

    gat_specs = config.gat
    r_gat = _projection(rng, (3, config.gat_dim))
    check(
        "layer:gat",
        lambda x: (nn.gat_stack(gat_specs, store, "gen.gat", x) * r_gat).sum(),
        rng.normal(size=(3, config.encoder_hidden)),
    )

    r_att = _projection(rng, (2, config.physical_dim))
    cells = rng.normal(size=(4, config.physical_dim))
    check(
        "layer:physical-attention",
        lambda q: (nn.physical_attention(config.attention, store, "gen.att_p", cells, q) * r_att).sum(),
        rng.normal(size=(2, config.encoder_hidden)),
    )

    r_cnn = _projection(rng, (4, config.physical_dim))
    check(
        "layer:grid-cnn",
        lambda g: (nn.grid_cnn(config.cnn, store, "gen.cnn", g) * r_cnn).sum(),
        rng.uniform(-1.0, 1.0, size=(9, 9, config.grid_channels)),
    )

    # losses, checked against the quantities they consume
    truth = scene.future
    check("loss:trajectory-l2", lambda y: trajectory_l2(y, truth), truth + rng.normal(0.0, 0.3, size=truth.shape))
    log_var = rng.normal(size=config.latent_dim)
    check("loss:kl-mu", lambda m: kl_divergence(m, Value(log_var)), rng.normal(size=config.latent_dim))

    # end-to-end losses, checked against a few coordinates of each weight
    weights = LossWeights()
    z = rng.standard_normal(config.latent_dim)
    epsilon = rng.standard_normal(config.latent_dim)
    fakes = [truth + rng.normal(0.0, 0.3, size=truth.shape) for _ in range(2)]

    def generator_total() -> Value:
        return generator_objective(config, store, scene, z, epsilon, weights).total

    def discriminator_total() -> Value:
        return discriminator_losses(config, store, scene, fakes).total

    for name in store.names("gen.") + store.names("enc."):
        results.append(
            CheckResult(f"generator-objective:{name}", _param_check(store, name, generator_total, step, tolerance, coordinates))
        )
    for name in store.names("disc."):
        results.append(
            CheckResult(f"discriminator-loss:{name}", _param_check(store, name, discriminator_total, step, tolerance, coordinates))
        )

    failed = [r.name for r in results if not r.passed]
    logger.info("gradient suite: %d check(s), %d failed", len(results), len(failed))
    return results


def results_table(results: list[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "check": [r.name for r in results],
            "max_relative_error": [r.report.max_relative_error for r in results],
            "tolerance": [r.report.tolerance for r in results],
            "passed": [r.passed for r in results],
        }
    )
